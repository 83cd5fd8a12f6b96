//! Masked-reconstruction pretraining of the tiny preset on synthetic frames.
//!
//! ```bash
//! cargo run --release --example mae_pretrain [epochs]
//! ```
//!
//! A quarter of the patches is hidden per image and epoch; the decoder
//! reconstructs them from the encoded visible patches and the loss is the
//! mean squared error over hidden patches only.

use usmae::data::synth::synthetic_examples;
use usmae::data::PreprocessConfig;
use usmae::model::{init_parameters, ModelConfig};
use usmae::train::{derive_rng, pretrain, Mode, Stream, TrainLog, TrainPlan};

fn main() -> usmae::Result<()> {
    let epochs = std::env::args().nth(1).map_or(60, |s| s.parse().expect("epochs must be an integer"));
    let pre = PreprocessConfig::default();
    let images: Vec<_> = synthetic_examples(32, 11, &pre)?.into_iter().map(|e| e.image).collect();

    let cfg = ModelConfig::tiny();
    println!(
        "{} images, {} patches each, {} hidden per view",
        images.len(),
        cfg.num_patches(),
        cfg.num_masked()
    );
    let seed = 11;
    let mut model = init_parameters(&cfg, &mut derive_rng(seed, Stream::Init, &[]))?;
    let plan = TrainPlan {
        epochs,
        batch_size: 8,
        base_lr: 1e-3,
        weight_decay: 0.05,
        ..TrainPlan::new(Mode::Pretrain, seed)
    };
    let mut log = TrainLog::default();
    pretrain(&mut model, &images, &plan, &mut log)?;

    let loss = log.series("train", "loss");
    let lr = log.series("train", "lr");
    for (epoch, (l, r)) in loss.iter().zip(&lr).enumerate().filter(|(e, _)| e % 10 == 0 || *e + 1 == epochs) {
        println!("epoch {:>4}  loss {l:.4}  lr {r:.2e}", epoch + 1);
    }
    println!("final / first = {:.3}", loss[loss.len() - 1] / loss[0]);
    Ok(())
}
