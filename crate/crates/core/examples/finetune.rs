//! Fine-tuning a classifier end to end: the decoder is discarded, a new
//! two-layer head is attached and every remaining weight is trained with
//! cross-entropy.
//!
//! ```bash
//! cargo run --release --example finetune [epochs]
//! ```

use usmae::data::synth::synthetic_examples;
use usmae::data::{PreprocessConfig, DEFAULT_CLASSES};
use usmae::metrics::{evaluate, Averaging};
use usmae::model::{init_parameters, ModelConfig};
use usmae::train::{derive_rng, finetune, Mode, Stream, TrainLog, TrainPlan};

fn main() -> usmae::Result<()> {
    let epochs = std::env::args().nth(1).map_or(40, |s| s.parse().expect("epochs must be an integer"));
    let pre = PreprocessConfig {
        target_size: 64,
        ..PreprocessConfig::default()
    };
    let train = synthetic_examples(60, 1, &pre)?;
    let val = synthetic_examples(30, 2, &pre)?;

    let mut cfg = ModelConfig::tiny();
    cfg.image_size = 64;
    let seed = 5;
    let mut model = init_parameters(&cfg, &mut derive_rng(seed, Stream::Init, &[]))?;
    let plan = TrainPlan {
        epochs,
        batch_size: 2,
        base_lr: 1e-3,
        augment: false,
        ..TrainPlan::new(Mode::Finetune, seed)
    };
    let mut log = TrainLog::default();
    let outcome = finetune(&mut model, &train, &val, DEFAULT_CLASSES.len(), &plan, &mut log)?;

    let (train_acc, val_acc) = (log.series("train", "accuracy"), log.series("val", "accuracy"));
    for e in (0..epochs).step_by(5) {
        println!("epoch {:>3}  train acc {:.3}  val acc {:.3}", e + 1, train_acc[e], val_acc[e]);
    }
    println!("best epoch {} with val accuracy {:.3}", outcome.best_epoch, outcome.best_val_accuracy.unwrap());

    let classes: Vec<String> = DEFAULT_CLASSES.iter().map(|s| s.to_string()).collect();
    let report = evaluate(&outcome.best, &val, &classes, Averaging::Weighted)?;
    println!("confusion (rows true, columns predicted):");
    for (name, row) in classes.iter().zip(&report.confusion) {
        println!("  {name:<6} {row:?}");
    }
    Ok(())
}
