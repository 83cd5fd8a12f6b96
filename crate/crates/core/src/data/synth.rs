//! Synthetic five-class corpus of ultrasound-like frames: a speckled scan
//! sector on a dark surround, a bright metadata band along the top and one
//! class-specific structure whose position, size and brightness vary per
//! image.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::image::{save_image, ImageRecord};
use super::manifest::{Manifest, Record, Split, DEFAULT_CLASSES};
use super::preprocess::{preprocess, PreprocessConfig};
use super::Example;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub patients: usize,
    pub images_per_patient: usize,
    /// Side of the square content area.
    pub size: usize,
    /// Height of the metadata band above the content.
    pub band: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            patients: 20,
            images_per_patient: 3,
            size: 64,
            band: 16,
            seed: 0,
        }
    }
}

fn seg_dist(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let t = (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
    ((p.0 - a.0 - t * dx).powi(2) + (p.1 - a.1 - t * dy).powi(2)).sqrt()
}

/// Renders one frame of class `class` (index into [`DEFAULT_CLASSES`]).
pub fn render<R: Rng + ?Sized>(class: usize, size: usize, band: usize, rng: &mut R) -> ImageRecord {
    let s = size as f64;
    let (cx, cy) = (
        s / 2.0 + rng.random_range(-0.1..0.1) * s,
        s / 2.0 + rng.random_range(-0.1..0.1) * s,
    );
    let r = s * rng.random_range(0.24..0.32);
    let bright = rng.random_range(120.0..160.0);
    let thick = s * 0.09;
    let blobs: Vec<(f64, f64)> = (0..4)
        .map(|_| (rng.random_range(0.15..0.85) * s, rng.random_range(0.15..0.85) * s))
        .collect();

    let strokes: Vec<((f64, f64), (f64, f64))> = match class {
        // two parallel inflow tracts
        1 => vec![
            ((cx - r * 0.5, cy - r), (cx - r * 0.5, cy + r)),
            ((cx + r * 0.5, cy - r), (cx + r * 0.5, cy + r)),
        ],
        3 => vec![((cx - r, cy - r), (cx, cy + r)), ((cx + r, cy - r), (cx, cy + r))],
        4 => vec![((cx - r, cy - r), (cx + r, cy + r)), ((cx + r, cy - r), (cx - r, cy + r))],
        _ => Vec::new(),
    };

    let (w, h) = (size, size + band);
    let mut pixels = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let speckle: f64 = rng.random_range(0.0..40.0);
            if y < band {
                // burned-in text: bright blocks on the band
                let on = (x / 4 + y / 3 + (x * 7 + y) % 5) % 3 == 0;
                pixels.push(if on { 235 } else { 10 });
                continue;
            }
            let p = (x as f64 + 0.5, (y - band) as f64 + 0.5);
            let hit = match class {
                0 => ((p.0 - cx).hypot(p.1 - cy) - r).abs() < thick,
                2 => blobs.iter().any(|&b| (p.0 - b.0).hypot(p.1 - b.1) < thick * 1.5),
                _ => strokes.iter().any(|&(a, b)| seg_dist(p, a, b) < thick),
            };
            // scan sector: apex above the top edge, ±40° opening
            let (ax, ay) = (s / 2.0, -0.15 * s);
            let inside = (p.0 - ax).atan2(p.1 - ay).abs() < 40f64.to_radians() && (p.0 - ax).hypot(p.1 - ay) < 1.1 * s;
            let v = match (hit, inside) {
                (true, _) => bright + speckle,
                (false, true) => 45.0 + speckle,
                (false, false) => speckle / 8.0,
            };
            pixels.push(v.clamp(0.0, 255.0) as u8);
        }
    }
    ImageRecord::gray(w, h, pixels).expect("valid synthetic image")
}

/// Class labels per image, patient-major.
fn labels(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = spec.patients * spec.images_per_patient;
    // balanced classes in a seeded order
    let mut labels: Vec<usize> = (0..n).map(|i| i % DEFAULT_CLASSES.len()).collect();
    use rand::seq::SliceRandom;
    labels.shuffle(rng);
    labels
}

/// Writes images and an unassigned `manifest.csv` into `dir`.
pub fn write_corpus(dir: &Path, spec: &SynthSpec) -> Result<Manifest> {
    if spec.patients == 0 || spec.images_per_patient == 0 {
        return Err(Error::validation("synthetic corpus needs patients and images"));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let labels = labels(spec, &mut rng);
    let mut records = Vec::new();
    for (i, &label) in labels.iter().enumerate() {
        let img = render(label, spec.size, spec.band, &mut rng);
        let name = format!("img_{i:04}.pgm");
        save_image(&dir.join(&name), &img)?;
        records.push(Record {
            path: name,
            label: DEFAULT_CLASSES[label].to_string(),
            patient_id: format!("patient_{:03}", i / spec.images_per_patient),
            split: Split::Unassigned,
        });
    }
    let manifest = Manifest::new(Manifest::default_classes(), records, dir.to_path_buf())?;
    manifest.write(&dir.join("manifest.csv"))?;
    Ok(manifest)
}

/// In-memory preprocessed examples, `n` images with balanced labels.
pub fn synthetic_examples(n: usize, seed: u64, cfg: &PreprocessConfig) -> Result<Vec<Example>> {
    let spec = SynthSpec {
        patients: n,
        images_per_patient: 1,
        seed,
        band: cfg.crop_top,
        ..SynthSpec::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    labels(&spec, &mut rng)
        .into_iter()
        .map(|label| {
            let img = render(label, spec.size, spec.band, &mut rng);
            Ok(Example {
                image: preprocess(&img, cfg)?,
                label,
            })
        })
        .collect()
}
