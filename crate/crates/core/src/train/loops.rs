use rand::seq::SliceRandom;

use super::adamw::AdamW;
use super::log::TrainLog;
use super::plan::{Mode, TrainPlan};
use super::schedule::lr_at;
use super::{derive_rng, Stream};
use crate::data::{augment, Example};
use crate::error::{Error, Result};
use crate::metrics::{argmax, predict, weighted_metrics};
use crate::model::{mae_loss, patchify, sample_mask, VitMae};
use crate::tensor::{Tape, Tensor};

fn shuffled(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut derive_rng(seed, Stream::Shuffle, &[epoch as u64]));
    order
}

/// Applies one optimizer step over the registered parameters, restoring
/// `snapshot` if the step fails or leaves a non-finite parameter.
fn step_or_restore(model: &mut VitMae, snapshot: &VitMae, opt: &mut AdamW, lr: f64, what: &str) -> Result<()> {
    let names: Vec<String> = opt.param_names().map(str::to_string).collect();
    let params = model.params_mut().into_iter().filter(|p| names.binary_search(&p.name).is_ok());
    let result = opt.step(params, lr).and_then(|()| {
        if model.all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(format!("{what}: parameters diverged")))
        }
    });
    if result.is_err() {
        *model = snapshot.clone();
    }
    result
}

/// Masked-reconstruction pretraining of encoder and decoder.
///
/// Each epoch visits the images in a seeded order, draws a fresh mask per
/// image, and takes one AdamW step per batch on the mean per-image loss. The
/// mean loss of every epoch is appended to `log`. If the loss or a parameter
/// becomes non-finite, `model` is restored to its state at the start of the
/// failing epoch and an error is returned.
pub fn pretrain(model: &mut VitMae, images: &[Tensor], plan: &TrainPlan, log: &mut TrainLog) -> Result<()> {
    plan.check(Mode::Pretrain)?;
    if images.is_empty() {
        return Err(Error::validation("pretraining corpus is empty"));
    }
    if model.decoder.is_none() {
        return Err(Error::validation("pretraining needs a model with a decoder"));
    }
    let cfg = model.config().clone();
    let patches = images
        .iter()
        .map(|im| patchify(im, cfg.patch_size))
        .collect::<Result<Vec<_>>>()?;
    let mut opt = AdamW::new(
        model.params().into_iter().filter(|p| !p.name.starts_with("head.")),
        plan.weight_decay,
    );
    let n = patches.len();
    let total = plan.total_steps(n);
    let mut step = 0;
    for epoch in 1..=plan.epochs {
        let snapshot = model.clone();
        // indexed by image so the epoch mean does not depend on visit order
        let mut losses = vec![0.0f64; n];
        let mut lr = 0.0;
        for batch in shuffled(n, plan.seed, epoch).chunks(plan.batch_size) {
            model.zero_grads();
            let scale = 1.0 / batch.len() as f32;
            for &i in batch {
                let mut rng = derive_rng(plan.seed, Stream::Mask, &[epoch as u64, i as u64]);
                let mask = sample_mask(cfg.num_patches(), cfg.mask_ratio, &mut rng)?;
                let mut tape = Tape::new();
                let encoded = model.encode(&mut tape, &patches[i], &mask)?;
                let pred = model.decode_reconstruct(&mut tape, encoded, &mask)?;
                let loss = mae_loss(&mut tape, pred, &patches[i], &mask)?;
                let value = tape.scalar(loss);
                if !value.is_finite() {
                    *model = snapshot;
                    return Err(Error::NonFinite(format!(
                        "reconstruction loss {value} at epoch {epoch}, step {step}"
                    )));
                }
                losses[i] = value as f64;
                let grads = tape.backward(loss);
                model.accumulate_grads(&tape, &grads, scale);
            }
            lr = lr_at(step, total, plan.base_lr, plan.warmup_fraction, plan.min_lr)?;
            step_or_restore(model, &snapshot, &mut opt, lr, &format!("epoch {epoch}, step {step}"))?;
            step += 1;
        }
        log.push(epoch, "train", "loss", losses.iter().sum::<f64>() / n as f64);
        log.push(epoch, "train", "lr", lr);
    }
    Ok(())
}

/// Discards the decoder, checks the class count and attaches a freshly
/// initialized head. The returned optimizer covers every remaining
/// parameter, so the whole network is trained end to end.
pub fn finetune_setup(model: &mut VitMae, num_classes: usize, plan: &TrainPlan) -> Result<AdamW> {
    plan.check(Mode::Finetune)?;
    if model.config().num_classes != num_classes {
        return Err(Error::validation(format!(
            "model head is configured for {} classes but the data declares {num_classes}",
            model.config().num_classes
        )));
    }
    model.drop_decoder();
    model.reset_head(&mut derive_rng(plan.seed, Stream::Head, &[]));
    Ok(AdamW::new(model.params(), plan.weight_decay))
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    /// Weights from the epoch with the highest validation accuracy (earliest
    /// on ties), or the final weights without a validation set.
    pub best: VitMae,
    pub best_epoch: usize,
    pub best_val_accuracy: Option<f64>,
}

/// Mean cross-entropy of softmax scores against labels.
fn mean_nll(preds: &crate::metrics::PredictionSet) -> f64 {
    let total: f64 = preds
        .samples()
        .iter()
        .map(|s| -s.scores[s.label].max(f64::MIN_POSITIVE).ln())
        .sum();
    total / preds.len() as f64
}

/// Supervised end-to-end fine-tuning with cross-entropy.
///
/// Training images are augmented when `plan.augment` is set; validation
/// images never are. Per epoch, training loss and accuracy (from the
/// training forward passes) and validation loss, accuracy, precision,
/// recall and F1 are logged. On return `model` holds the final weights.
pub fn finetune(
    model: &mut VitMae,
    train: &[Example],
    val: &[Example],
    num_classes: usize,
    plan: &TrainPlan,
    log: &mut TrainLog,
) -> Result<FinetuneOutcome> {
    if train.is_empty() {
        return Err(Error::validation("fine-tuning set is empty"));
    }
    if let Some(ex) = train.iter().chain(val).find(|ex| ex.label >= num_classes) {
        return Err(Error::validation(format!(
            "label {} outside the {num_classes}-class set",
            ex.label
        )));
    }
    let mut opt = finetune_setup(model, num_classes, plan)?;
    let patch = model.config().patch_size;
    let n = train.len();
    let total = plan.total_steps(n);
    let mut step = 0;
    let mut best: Option<(VitMae, usize, f64)> = None;
    for epoch in 1..=plan.epochs {
        let snapshot = model.clone();
        let (mut losses, mut correct) = (vec![0.0f64; n], 0usize);
        for batch in shuffled(n, plan.seed, epoch).chunks(plan.batch_size) {
            model.zero_grads();
            let scale = 1.0 / batch.len() as f32;
            for &i in batch {
                let ex = &train[i];
                let image = if plan.augment {
                    let mut rng = derive_rng(plan.seed, Stream::Augment, &[epoch as u64, i as u64]);
                    augment(&ex.image, &mut rng)
                } else {
                    ex.image.clone()
                };
                let patches = patchify(&image, patch)?;
                let mut tape = Tape::new();
                let logits = model.classify_batch(&mut tape, &[&patches])?;
                let loss = tape.cross_entropy_logits(logits, &[ex.label])?;
                let value = tape.scalar(loss);
                if !value.is_finite() {
                    *model = snapshot;
                    return Err(Error::NonFinite(format!(
                        "classification loss {value} at epoch {epoch}, step {step}"
                    )));
                }
                let scores: Vec<f64> = tape.value(logits).iter().map(|&z| z as f64).collect();
                correct += (argmax(&scores) == ex.label) as usize;
                losses[i] = value as f64;
                let grads = tape.backward(loss);
                model.accumulate_grads(&tape, &grads, scale);
            }
            let lr = lr_at(step, total, plan.base_lr, plan.warmup_fraction, plan.min_lr)?;
            step_or_restore(model, &snapshot, &mut opt, lr, &format!("epoch {epoch}, step {step}"))?;
            step += 1;
        }
        log.push(epoch, "train", "loss", losses.iter().sum::<f64>() / n as f64);
        log.push(epoch, "train", "accuracy", correct as f64 / n as f64);

        if !val.is_empty() {
            let preds = predict(model, val)?;
            let s = weighted_metrics(&preds)?;
            log.push(epoch, "val", "loss", mean_nll(&preds));
            log.push(epoch, "val", "accuracy", s.accuracy);
            log.push(epoch, "val", "precision", s.precision);
            log.push(epoch, "val", "recall", s.recall);
            log.push(epoch, "val", "f1", s.f1);
            if best.as_ref().is_none_or(|b| s.accuracy > b.2) {
                best = Some((model.clone(), epoch, s.accuracy));
            }
        }
    }
    Ok(match best {
        Some((best, best_epoch, acc)) => FinetuneOutcome {
            best,
            best_epoch,
            best_val_accuracy: Some(acc),
        },
        None => FinetuneOutcome {
            best: model.clone(),
            best_epoch: plan.epochs,
            best_val_accuracy: None,
        },
    })
}
