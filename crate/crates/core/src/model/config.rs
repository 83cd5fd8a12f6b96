use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the classification head reads the encoder output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    ClassToken,
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub in_channels: usize,
    pub encoder_dim: usize,
    pub encoder_depth: usize,
    pub encoder_heads: usize,
    pub decoder_dim: usize,
    pub decoder_depth: usize,
    pub decoder_heads: usize,
    pub mlp_ratio: usize,
    pub mask_ratio: f64,
    pub num_classes: usize,
    /// Hidden width of the classification MLP.
    pub head_hidden: usize,
    pub pooling: Pooling,
    pub layer_norm_eps: f64,
}

impl ModelConfig {
    /// Encoder geometry with a derived lightweight decoder: half the width,
    /// two blocks, half the heads (at least one).
    pub fn with_encoder(dim: usize, depth: usize, heads: usize) -> Self {
        Self {
            image_size: 224,
            patch_size: 16,
            in_channels: 3,
            encoder_dim: dim,
            encoder_depth: depth,
            encoder_heads: heads,
            decoder_dim: dim / 2,
            decoder_depth: 2,
            decoder_heads: (heads / 2).max(1),
            mlp_ratio: 4,
            mask_ratio: 0.25,
            num_classes: 5,
            head_hidden: dim,
            pooling: Pooling::Mean,
            layer_norm_eps: 1e-6,
        }
    }

    /// ViT-B/16 scale encoder.
    pub fn vitb() -> Self {
        Self::with_encoder(768, 12, 12)
    }

    /// Desk-scale encoder used by the tests and examples.
    pub fn tiny() -> Self {
        Self::with_encoder(64, 4, 4)
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "vitb" => Some(Self::vitb()),
            "tiny" => Some(Self::tiny()),
            _ => None,
        }
    }

    pub fn grid_side(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid_side() * self.grid_side()
    }

    /// Values per flattened patch.
    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.in_channels
    }

    pub fn num_masked(&self) -> usize {
        (self.mask_ratio * self.num_patches() as f64).floor() as usize
    }

    /// Collects every violated constraint.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let mut need = |ok: bool, msg: String| {
            if !ok {
                v.push(msg);
            }
        };
        need(self.patch_size > 0, "patch_size must be positive".into());
        need(
            self.patch_size > 0 && self.image_size > 0 && self.image_size.is_multiple_of(self.patch_size),
            format!(
                "image_size {} must be a positive multiple of patch_size {}",
                self.image_size, self.patch_size
            ),
        );
        need(self.in_channels > 0, "in_channels must be positive".into());
        for (name, dim, heads) in [
            ("encoder", self.encoder_dim, self.encoder_heads),
            ("decoder", self.decoder_dim, self.decoder_heads),
        ] {
            need(
                heads > 0 && dim % heads == 0,
                format!("{name}_dim {dim} must be divisible by {name}_heads {heads}"),
            );
            // sin-cos tables split the width into four equal bands
            need(
                dim > 0 && dim % 4 == 0,
                format!("{name}_dim {dim} must be a positive multiple of 4"),
            );
        }
        need(self.mlp_ratio > 0, "mlp_ratio must be positive".into());
        need(
            self.mask_ratio > 0.0 && self.mask_ratio < 1.0,
            format!("mask_ratio {} must lie in (0, 1)", self.mask_ratio),
        );
        need(self.num_classes >= 2, "num_classes must be at least 2".into());
        need(self.head_hidden > 0, "head_hidden must be positive".into());
        need(
            self.layer_norm_eps > 0.0 && self.layer_norm_eps.is_finite(),
            "layer_norm_eps must be positive".into(),
        );
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::vitb()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_give_196_patches_of_768_values() {
        let c = ModelConfig::default();
        assert_eq!(c.num_patches(), 196);
        assert_eq!(c.patch_dim(), 768);
        assert_eq!(c.num_masked(), 49);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn tiny_decoder_is_derived() {
        let c = ModelConfig::tiny();
        assert_eq!((c.decoder_dim, c.decoder_depth, c.decoder_heads), (32, 2, 2));
        let one = ModelConfig::with_encoder(8, 1, 1);
        assert_eq!(one.decoder_heads, 1);
    }

    #[test]
    fn violations_are_all_reported() {
        let mut c = ModelConfig::tiny();
        c.image_size = 100;
        c.encoder_heads = 3;
        c.mask_ratio = 1.0;
        let v = c.violations();
        assert_eq!(v.len(), 3, "{v:?}");
    }
}
