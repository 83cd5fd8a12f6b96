use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::Param;
use crate::tensor::Real;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// Biases, normalization parameters, learned tokens and positional tables
/// receive no weight decay.
pub fn decay_exempt(name: &str) -> bool {
    name.ends_with(".bias")
        || name.split('.').any(|part| part.starts_with("norm"))
        || name.contains("cls_token")
        || name.contains("mask_token")
        || name.contains("pos_embed")
}

#[derive(Clone, Debug, PartialEq)]
struct Moments<T> {
    m: Vec<T>,
    v: Vec<T>,
}

/// AdamW with decoupled weight decay. State is keyed by parameter name and
/// fixed at construction: only registered parameters are ever updated.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW<T: Real = f32> {
    weight_decay: f64,
    step: u64,
    state: BTreeMap<String, Moments<T>>,
}

impl<T: Real> AdamW<T> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Param<T>>, weight_decay: f64) -> Self {
        let state = params
            .into_iter()
            .map(|p| {
                let n = p.value.numel();
                (
                    p.name.clone(),
                    Moments {
                        m: vec![T::zero(); n],
                        v: vec![T::zero(); n],
                    },
                )
            })
            .collect();
        Self {
            weight_decay,
            step: 0,
            state,
        }
    }

    pub fn weight_decay(&self) -> f64 {
        self.weight_decay
    }

    /// Steps taken so far.
    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Registered parameter names in sorted order.
    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.state.keys().map(String::as_str)
    }

    /// One update at learning rate `lr`. Parameters without a gradient are
    /// left untouched. Nothing is modified if any gradient is non-finite.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Param<T>>, lr: f64) -> Result<()> {
        let mut params: Vec<&mut Param<T>> = params.into_iter().collect();
        for p in &params {
            if !self.state.contains_key(&p.name) {
                return Err(Error::validation(format!("parameter {} is not registered with the optimizer", p.name)));
            }
            if let Some(g) = p.value.grad() {
                if let Some(i) = g.iter().position(|x| !x.is_finite()) {
                    return Err(Error::NonFinite(format!("gradient of {} at element {i}", p.name)));
                }
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::lit(BETA1), T::lit(BETA2));
        let (one, eps) = (T::one(), T::lit(EPS));
        let c1 = one - b1.powi(t);
        let c2 = one - b2.powi(t);
        let lr_t = T::lit(lr);
        for p in &mut params {
            let Some(g) = p.value.grad().map(<[T]>::to_vec) else {
                continue;
            };
            let state = self.state.get_mut(&p.name).expect("checked above");
            let decay = if decay_exempt(&p.name) {
                one
            } else {
                one - T::lit(lr * self.weight_decay)
            };
            for (((theta, g), m), v) in p.value.data_mut().iter_mut().zip(&g).zip(&mut state.m).zip(&mut state.v) {
                *m = b1 * *m + (one - b1) * *g;
                *v = b2 * *v + (one - b2) * *g * *g;
                let update = (*m / c1) / ((*v / c2).sqrt() + eps);
                *theta = *theta * decay - lr_t * update;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn param(name: &str, value: f64, grad: f64) -> Param<f64> {
        let mut value = Tensor::scalar(value).with_grad();
        value.accumulate_grad(&[grad], 1.0);
        Param {
            name: name.into(),
            value,
        }
    }

    #[test]
    fn exemptions() {
        for name in [
            "encoder.blocks.0.attn.qkv.bias",
            "encoder.blocks.3.norm1.gain",
            "encoder.norm.bias",
            "encoder.cls_token",
            "decoder.mask_token",
        ] {
            assert!(decay_exempt(name), "{name}");
        }
        for name in ["encoder.patch_embed.weight", "head.fc2.weight", "encoder.blocks.0.mlp.fc1.weight"] {
            assert!(!decay_exempt(name), "{name}");
        }
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = param("w", 1.0, 1.0);
        let mut opt = AdamW::new([&p], 0.0);
        opt.step([&mut p], 0.1).unwrap();
        let want = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((p.value.data()[0] - want).abs() < 1e-15);
        assert!((p.value.data()[0] - 0.9).abs() < 1e-7);
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut p = param("w", 0.37, 0.0);
        let mut opt = AdamW::new([&p], 0.0);
        for _ in 0..3 {
            opt.step([&mut p], 0.5).unwrap();
        }
        assert_eq!(p.value.data()[0], 0.37);
        assert_eq!(opt.steps(), 3);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = param("head.fc1.weight", 1.0, f64::NAN);
        let mut opt = AdamW::new([&p], 0.1);
        let err = opt.step([&mut p], 0.1).unwrap_err().to_string();
        assert!(err.contains("head.fc1.weight"), "{err}");
        assert_eq!(p.value.data()[0], 1.0);
        assert_eq!(opt.steps(), 0);
    }

    #[test]
    fn unregistered_parameter_is_rejected() {
        let p = param("a", 1.0, 1.0);
        let mut q = param("b", 1.0, 1.0);
        let mut opt = AdamW::new([&p], 0.0);
        assert!(opt.step([&mut q], 0.1).is_err());
    }
}
