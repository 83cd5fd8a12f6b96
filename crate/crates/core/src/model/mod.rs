//! Vision Transformer masked autoencoder.

pub mod checkpoint;
mod config;
mod mask;
mod patch;
mod posembed;
mod vit;

pub use config::{ModelConfig, Pooling};
pub use mask::{sample_mask, MaskPlan};
pub use patch::{patchify, unpatchify};
pub use posembed::sincos_2d;
pub use vit::{init_parameters, mae_loss, mae_loss_batch, Block, ClassHead, Decoder, Encoder, LayerNorm, Linear, Param, VitMae};
