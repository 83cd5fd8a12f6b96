//! Geometric augmentation of one synthetic frame, written as PGM files for
//! inspection.
//!
//! ```bash
//! cargo run --example augmentation [out_dir]
//! ```
//!
//! Draws combine a rotation of up to 90°, independent horizontal and
//! vertical flips, and a resized crop whose window covers half to twice the
//! image area. Regions sampled from outside the frame are zero after
//! normalization, i.e. the channel mean.

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use usmae::data::augment::apply;
use usmae::data::synth::render;
use usmae::data::{preprocess, save_image, AugmentParams, ImageRecord, PreprocessConfig};
use usmae::tensor::Tensor;

/// Maps channel 0 of a normalized `[3, s, s]` tensor back to 8-bit gray.
fn to_gray(t: &Tensor, cfg: &PreprocessConfig) -> usmae::Result<ImageRecord> {
    let s = t.shape()[1];
    let pixels = t.data()[..s * s]
        .iter()
        .map(|&v| ((v * cfg.std[0] + cfg.mean[0]) * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    ImageRecord::gray(s, s, pixels)
}

fn main() -> usmae::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("usmae-augmentation"));
    std::fs::create_dir_all(&out).map_err(|e| usmae::Error::Io {
        path: out.clone(),
        source: e,
    })?;
    let cfg = PreprocessConfig {
        target_size: 128,
        ..PreprocessConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let frame = render(3, 128, cfg.crop_top, &mut rng);
    let x = preprocess(&frame, &cfg)?;
    save_image(&out.join("original.pgm"), &to_gray(&x, &cfg)?)?;

    for i in 0..6 {
        let p = AugmentParams::sample(&mut rng);
        println!(
            "view {i}: rotate {:5.1}°  hflip {:5}  vflip {:5}  area {:.2}  offset ({:.2}, {:.2})",
            p.angle_deg, p.hflip, p.vflip, p.scale, p.offset.0, p.offset.1
        );
        save_image(&out.join(format!("view_{i}.pgm")), &to_gray(&apply(&x, &p), &cfg)?)?;
    }
    println!("wrote original.pgm and view_0..5.pgm to {}", out.display());
    Ok(())
}
