use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Pretrain,
    Finetune,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainPlan {
    pub mode: Mode,
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    /// Share of all optimizer steps spent in linear warm-up.
    pub warmup_fraction: f64,
    /// Floor reached by the cosine schedule at the last step.
    pub min_lr: f64,
    pub seed: u64,
    /// Geometric augmentation of training images (fine-tuning only).
    pub augment: bool,
}

impl TrainPlan {
    pub fn new(mode: Mode, seed: u64) -> Self {
        Self {
            mode,
            epochs: 120,
            batch_size: 64,
            base_lr: 5e-4,
            weight_decay: 0.01,
            warmup_fraction: 0.1,
            min_lr: 0.0,
            seed,
            augment: mode == Mode::Finetune,
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.epochs == 0 {
            v.push("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            v.push("batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            v.push(format!("warmup_fraction {} must lie in [0, 1)", self.warmup_fraction));
        }
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            v.push(format!("lr {} must be finite and nonnegative", self.base_lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            v.push(format!("weight_decay {} must be finite and nonnegative", self.weight_decay));
        }
        if !(self.min_lr >= 0.0 && self.min_lr <= self.base_lr) {
            v.push(format!("min_lr {} must lie in [0, lr]", self.min_lr));
        }
        v
    }

    pub(crate) fn check(&self, mode: Mode) -> Result<()> {
        let mut v = self.violations();
        if self.mode != mode {
            v.push(format!("plan mode is {:?}, expected {mode:?}", self.mode));
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }

    /// Optimizer steps for `n` samples, keeping the last partial batch.
    pub fn total_steps(&self, n: usize) -> usize {
        self.epochs * n.div_ceil(self.batch_size)
    }
}
