use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Splits a `[c, h, w]` image into `[num_patches, patch_size² · c]`.
///
/// Patches are numbered row-major over the grid. Within a patch, values are
/// channel-major, then row-major over pixels.
pub fn patchify<T: Real>(image: &Tensor<T>, patch_size: usize) -> Result<Tensor<T>> {
    let &[c, h, w] = image.shape() else {
        return Err(Error::validation(format!(
            "patchify expects [c, h, w], got {:?}",
            image.shape()
        )));
    };
    if patch_size == 0 || h % patch_size != 0 || w % patch_size != 0 {
        return Err(Error::validation(format!(
            "image {h}x{w} is not divisible into {patch_size}-pixel patches"
        )));
    }
    let (gh, gw, p) = (h / patch_size, w / patch_size, patch_size);
    let src = image.data();
    let mut out = Vec::with_capacity(src.len());
    for r in 0..gh {
        for q in 0..gw {
            for ch in 0..c {
                for dy in 0..p {
                    let row = ch * h * w + (r * p + dy) * w + q * p;
                    out.extend_from_slice(&src[row..row + p]);
                }
            }
        }
    }
    Tensor::new(vec![gh * gw, p * p * c], out)
}

/// Inverse of [`patchify`].
pub fn unpatchify<T: Real>(
    patches: &Tensor<T>,
    channels: usize,
    height: usize,
    width: usize,
    patch_size: usize,
) -> Result<Tensor<T>> {
    let p = patch_size;
    if p == 0 || !height.is_multiple_of(p) || !width.is_multiple_of(p) {
        return Err(Error::validation("image not divisible into patches"));
    }
    let (gh, gw) = (height / p, width / p);
    if patches.shape() != [gh * gw, p * p * channels] {
        return Err(Error::Shape {
            op: "unpatchify",
            lhs: patches.shape().to_vec(),
            rhs: vec![gh * gw, p * p * channels],
        });
    }
    let src = patches.data();
    let mut out = vec![T::zero(); channels * height * width];
    let mut k = 0;
    for r in 0..gh {
        for q in 0..gw {
            for ch in 0..channels {
                for dy in 0..p {
                    let row = ch * height * width + (r * p + dy) * width + q * p;
                    out[row..row + p].copy_from_slice(&src[k..k + p]);
                    k += p;
                }
            }
        }
    }
    Tensor::new(vec![channels, height, width], out)
}
