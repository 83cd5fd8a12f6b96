//! Patient-exclusive train/val/test assignment of the bundled corpus.
//!
//! ```bash
//! cargo run --example patient_split [seed]
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use usmae::data::{split_patients, Manifest, Split, DEFAULT_FRACTIONS};

fn main() -> usmae::Result<()> {
    let seed = std::env::args().nth(1).map_or(0, |s| s.parse().expect("seed must be an integer"));
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/synthetic/manifest.csv");
    let manifest = Manifest::read(&path)?;
    let assigned = split_patients(&manifest, DEFAULT_FRACTIONS, seed)?;

    let total = assigned.records.len() as f64;
    let mut patients: BTreeMap<Split, BTreeSet<&str>> = BTreeMap::new();
    println!("{:<6} {:>6} {:>6} {:>9}  per class", "split", "images", "share", "patients");
    for split in Split::ASSIGNED {
        let records: Vec<_> = assigned.split(split).collect();
        let ids: BTreeSet<&str> = records.iter().map(|r| r.patient_id.as_str()).collect();
        let per_class: Vec<usize> = assigned
            .classes
            .iter()
            .map(|c| records.iter().filter(|r| &r.label == c).count())
            .collect();
        println!(
            "{:<6} {:>6} {:>6.3} {:>9}  {per_class:?}",
            split.as_str(),
            records.len(),
            records.len() as f64 / total,
            ids.len()
        );
        patients.insert(split, ids);
    }
    let shared = Split::ASSIGNED
        .iter()
        .enumerate()
        .flat_map(|(i, a)| Split::ASSIGNED[i + 1..].iter().map(move |b| (a, b)))
        .map(|(a, b)| patients[a].intersection(&patients[b]).count())
        .sum::<usize>();
    println!("patients shared between splits: {shared}");
    Ok(())
}
