//! Optimization: AdamW, the learning-rate schedule, pretraining and
//! fine-tuning loops, and hyperparameter grid search.

mod adamw;
mod grid;
mod log;
mod loops;
mod plan;
mod schedule;

pub use adamw::{decay_exempt, AdamW, BETA1, BETA2, EPS};
pub use grid::{grid_search, GridReport, GridRow, GridSpace, RunScore};
pub use log::{LogRow, TrainLog};
pub use loops::{finetune, finetune_setup, pretrain, FinetuneOutcome};
pub use plan::{Mode, TrainPlan};
pub use schedule::{lr_at, warmup_steps};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent random streams derived from one run seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Shuffle = 1,
    Mask = 2,
    Augment = 3,
    Head = 4,
    Init = 5,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for `stream` keyed by `(seed, ids)`, e.g. `(epoch, image)`.
/// Draws never depend on evaluation order.
pub fn derive_rng(seed: u64, stream: Stream, ids: &[u64]) -> ChaCha8Rng {
    let mut h = splitmix(seed ^ splitmix(stream as u64));
    for &id in ids {
        h = splitmix(h ^ splitmix(id.wrapping_add(h)));
    }
    ChaCha8Rng::seed_from_u64(h)
}
