use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Partition of patch indices into the encoder-visible and hidden sets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskPlan {
    num_patches: usize,
    visible: Vec<usize>,
    masked: Vec<usize>,
}

impl MaskPlan {
    /// Builds a plan from explicit index lists, checking that they partition
    /// `0..num_patches`. The order of `visible` is the encoder token order.
    pub fn new(num_patches: usize, visible: Vec<usize>, masked: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; num_patches];
        for &i in visible.iter().chain(&masked) {
            if i >= num_patches || std::mem::replace(&mut seen[i], true) {
                return Err(Error::validation(format!(
                    "mask plan index {i} is out of range or repeated"
                )));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::validation("mask plan does not cover every patch"));
        }
        Ok(Self {
            num_patches,
            visible,
            masked,
        })
    }

    /// Every patch visible.
    pub fn full(num_patches: usize) -> Self {
        Self {
            num_patches,
            visible: (0..num_patches).collect(),
            masked: Vec::new(),
        }
    }

    pub fn num_patches(&self) -> usize {
        self.num_patches
    }

    pub fn visible(&self) -> &[usize] {
        &self.visible
    }

    pub fn masked(&self) -> &[usize] {
        &self.masked
    }
}

/// Hides `floor(mask_ratio · num_patches)` patches drawn uniformly without
/// replacement. Both index lists come back sorted.
pub fn sample_mask<R: Rng + ?Sized>(num_patches: usize, mask_ratio: f64, rng: &mut R) -> Result<MaskPlan> {
    if !(mask_ratio > 0.0 && mask_ratio < 1.0) {
        return Err(Error::validation(format!(
            "mask_ratio {mask_ratio} must lie in (0, 1)"
        )));
    }
    let count = (mask_ratio * num_patches as f64).floor() as usize;
    let mut hidden = vec![false; num_patches];
    for i in rand::seq::index::sample(rng, num_patches, count) {
        hidden[i] = true;
    }
    let (masked, visible): (Vec<usize>, Vec<usize>) = (0..num_patches).partition(|&i| hidden[i]);
    Ok(MaskPlan {
        num_patches,
        visible,
        masked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_ratio_masks_49_of_196() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let plan = sample_mask(196, 0.25, &mut rng).unwrap();
            assert_eq!(plan.masked().len(), 49);
            assert_eq!(plan.visible().len(), 147);
            assert!(MaskPlan::new(196, plan.visible().to_vec(), plan.masked().to_vec()).is_ok());
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = sample_mask(4, 0.25, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_mask(4, 0.25, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a.masked().len(), 1);
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_ratio_outside_open_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for r in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(sample_mask(10, r, &mut rng).is_err());
        }
    }

    #[test]
    fn indices_are_masked_uniformly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let draws = 100_000;
        let mut counts = [0usize; 8];
        for _ in 0..draws {
            for &i in sample_mask(8, 0.25, &mut rng).unwrap().masked() {
                counts[i] += 1;
            }
        }
        let total: usize = counts.iter().sum();
        assert_eq!(total, 2 * draws);
        for c in counts {
            // share of all masked slots, and per-draw inclusion probability
            let share = c as f64 / total as f64;
            assert!((share - 0.125).abs() < 0.01, "{counts:?}");
            let inclusion = c as f64 / draws as f64;
            assert!((inclusion - 0.25).abs() < 0.01, "{counts:?}");
        }
    }

    #[test]
    fn explicit_plans_must_partition() {
        assert!(MaskPlan::new(3, vec![0, 1], vec![1]).is_err());
        assert!(MaskPlan::new(3, vec![0], vec![1]).is_err());
        assert!(MaskPlan::new(3, vec![2, 0], vec![1]).is_ok());
    }
}
