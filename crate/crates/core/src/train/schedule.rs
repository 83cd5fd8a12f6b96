use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Warm-up length in optimizer steps.
pub fn warmup_steps(total_steps: usize, warmup_fraction: f64) -> usize {
    (warmup_fraction * total_steps as f64).round() as usize
}

/// Learning rate at `step` of `total_steps`: a linear ramp from 0 reaching
/// `base_lr` at the end of warm-up, then a half cosine down to `min_lr` at
/// the final step.
pub fn lr_at(step: usize, total_steps: usize, base_lr: f64, warmup_fraction: f64, min_lr: f64) -> Result<f64> {
    if step >= total_steps {
        return Err(Error::validation(format!("step {step} outside schedule of {total_steps} steps")));
    }
    if !(0.0..1.0).contains(&warmup_fraction) {
        return Err(Error::validation(format!("warmup_fraction {warmup_fraction} must lie in [0, 1)")));
    }
    let warmup = warmup_steps(total_steps, warmup_fraction).min(total_steps - 1);
    if step < warmup {
        return Ok(base_lr * step as f64 / warmup as f64);
    }
    let span = total_steps - 1 - warmup;
    if span == 0 {
        return Ok(base_lr);
    }
    let progress = (step - warmup) as f64 / span as f64;
    Ok(min_lr + (base_lr - min_lr) * 0.5 * (1.0 + (PI * progress).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apex_midpoint_and_end() {
        let (total, base) = (1000, 5e-4);
        let w = warmup_steps(total, 0.1);
        assert_eq!(w, 100);
        assert_eq!(lr_at(w, total, base, 0.1, 0.0).unwrap(), base);
        assert_eq!(lr_at(0, total, base, 0.1, 0.0).unwrap(), 0.0);
        // cosine phase covers steps 100..=999; its midpoint is not an integer
        // step, so use an odd span
        let total = 1001;
        let w = warmup_steps(total, 0.1);
        let mid = w + (total - 1 - w) / 2;
        assert!((lr_at(mid, total, base, 0.1, 0.0).unwrap() - base / 2.0).abs() < 1e-9);
        assert!(lr_at(999, 1000, base, 0.1, 0.0).unwrap() < 1e-8);
    }

    #[test]
    fn out_of_range_step_is_rejected() {
        assert!(lr_at(10, 10, 1.0, 0.1, 0.0).is_err());
        assert!(lr_at(0, 10, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn degenerate_lengths() {
        assert_eq!(lr_at(0, 1, 0.3, 0.0, 0.0).unwrap(), 0.3);
        assert_eq!(lr_at(1, 2, 0.3, 0.5, 0.0).unwrap(), 0.3);
    }

    #[test]
    fn floor_is_reached() {
        assert!((lr_at(99, 100, 1.0, 0.1, 0.01).unwrap() - 0.01).abs() < 1e-15);
    }
}
