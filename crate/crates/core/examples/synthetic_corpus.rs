//! Writes the bundled five-class synthetic corpus.
//!
//! ```bash
//! cargo run --example synthetic_corpus               # regenerate data/synthetic
//! cargo run --example synthetic_corpus -- /tmp/demo 8  # 8 patients elsewhere
//! ```
//!
//! Every frame is a 64×64 speckled scan sector under a 16-row metadata band,
//! holding one class-specific structure. Labels are balanced; three images
//! per patient; the manifest is left unassigned so `usmae split` can be
//! demonstrated on it.

use std::path::PathBuf;

use usmae::data::synth::{write_corpus, SynthSpec};

/// Settings of the corpus shipped in `data/synthetic`.
pub fn bundled_spec() -> SynthSpec {
    SynthSpec {
        patients: 60,
        images_per_patient: 3,
        seed: 2024,
        ..SynthSpec::default()
    }
}

fn main() -> usmae::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/synthetic"));
    let mut spec = bundled_spec();
    if let Some(n) = args.next() {
        spec.patients = n.parse().expect("patient count must be an integer");
    }
    let manifest = write_corpus(&dir, &spec)?;
    let mut counts = vec![0usize; manifest.classes.len()];
    for r in &manifest.records {
        counts[manifest.class_index(&r.label)?] += 1;
    }
    println!("wrote {} images to {}", manifest.records.len(), dir.display());
    for (class, n) in manifest.classes.iter().zip(counts) {
        println!("  {class:<8} {n}");
    }
    Ok(())
}
