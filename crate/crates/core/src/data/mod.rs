//! Image ingestion, preprocessing, augmentation, manifests and splitting.

pub mod augment;
mod image;
mod manifest;
mod preprocess;
mod split;
pub mod synth;

pub use augment::{augment, AugmentParams};
pub use image::{decode_image, encode_pnm, encode_raw, load_image, save_image, ImageRecord, RAW_MAGIC};
pub use manifest::{Manifest, Record, Split, DEFAULT_CLASSES};
pub use preprocess::{preprocess, resize_bilinear, PreprocessConfig, IMAGENET_MEAN, IMAGENET_STD};
pub use split::{split_patients, DEFAULT_FRACTIONS};

use crate::error::Result;
use crate::tensor::Tensor;

/// A preprocessed image `[3, size, size]` with its class index.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub image: Tensor,
    pub label: usize,
}

/// Loads and preprocesses every record of `split`, in manifest order.
pub fn load_split(manifest: &Manifest, split: Split, cfg: &PreprocessConfig) -> Result<Vec<Example>> {
    manifest
        .split(split)
        .map(|r| {
            Ok(Example {
                image: preprocess(&load_image(&manifest.resolve(r))?, cfg)?,
                label: manifest.class_index(&r.label)?,
            })
        })
        .collect()
}
