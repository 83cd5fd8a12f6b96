use serde::{Deserialize, Serialize};

use super::image::ImageRecord;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// Border crop, resize target and per-channel normalization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// Rows removed from the top, where scanners burn in metadata.
    pub crop_top: usize,
    pub crop_bottom: usize,
    pub crop_left: usize,
    pub crop_right: usize,
    pub target_size: usize,
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            crop_top: 16,
            crop_bottom: 0,
            crop_left: 0,
            crop_right: 0,
            target_size: 224,
            mean: IMAGENET_MEAN,
            std: IMAGENET_STD,
        }
    }
}

impl PreprocessConfig {
    pub fn without_crop() -> Self {
        Self {
            crop_top: 0,
            ..Self::default()
        }
    }

    pub fn violations(&self, patch_size: usize) -> Vec<String> {
        let mut v = Vec::new();
        if self.target_size == 0 || patch_size == 0 || !self.target_size.is_multiple_of(patch_size) {
            v.push(format!(
                "target_size {} must be a positive multiple of patch_size {patch_size}",
                self.target_size
            ));
        }
        if self.std.iter().any(|&s| !(s > 0.0)) {
            v.push("normalization std must be positive".into());
        }
        v
    }
}

/// Resamples one `w x h` plane to `tw x th` with bilinear weights on pixel
/// centers (`src = (dst + ½)·scale − ½`), clamping at the edges.
pub fn resize_bilinear(plane: &[f32], w: usize, h: usize, tw: usize, th: usize) -> Vec<f32> {
    assert_eq!(plane.len(), w * h, "plane size");
    let taps = |src: usize, dst: usize| -> Vec<(usize, usize, f32)> {
        let scale = src as f64 / dst as f64;
        (0..dst)
            .map(|d| {
                let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(src - 1);
                (i0, i1, (s - i0 as f64) as f32)
            })
            .collect()
    };
    let xs = taps(w, tw);
    let ys = taps(h, th);
    let mut out = Vec::with_capacity(tw * th);
    for &(y0, y1, fy) in &ys {
        let (r0, r1) = (&plane[y0 * w..][..w], &plane[y1 * w..][..w]);
        for &(x0, x1, fx) in &xs {
            let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
            let bottom = r1[x0] + (r1[x1] - r1[x0]) * fx;
            out.push(top + (bottom - top) * fy);
        }
    }
    out
}

/// Crop, bilinear resize, gray-to-RGB replication, scaling to `[0, 1]` and
/// per-channel normalization. Output is `[3, target, target]`.
pub fn preprocess(img: &ImageRecord, cfg: &PreprocessConfig) -> Result<Tensor> {
    let (cw, ch) = (
        img.width.checked_sub(cfg.crop_left + cfg.crop_right).filter(|&w| w > 0),
        img.height.checked_sub(cfg.crop_top + cfg.crop_bottom).filter(|&h| h > 0),
    );
    let (Some(cw), Some(ch)) = (cw, ch) else {
        return Err(Error::validation(format!(
            "crop (top {}, bottom {}, left {}, right {}) exceeds {}x{} image",
            cfg.crop_top, cfg.crop_bottom, cfg.crop_left, cfg.crop_right, img.width, img.height
        )));
    };
    if cfg.target_size == 0 {
        return Err(Error::validation("target_size must be positive"));
    }
    let t = cfg.target_size;
    let mut data = Vec::with_capacity(3 * t * t);
    for c in 0..3 {
        let src_c = if img.channels == 1 { 0 } else { c };
        let plane: Vec<f32> = (0..ch)
            .flat_map(|y| (0..cw).map(move |x| (x, y)))
            .map(|(x, y)| img.at(x + cfg.crop_left, y + cfg.crop_top, src_c) as f32)
            .collect();
        let (mean, std) = (cfg.mean[c], cfg.std[c]);
        data.extend(
            resize_bilinear(&plane, cw, ch, t, t)
                .into_iter()
                .map(|v| (v / 255.0 - mean) / std),
        );
    }
    Tensor::new(vec![3, t, t], data)
}
