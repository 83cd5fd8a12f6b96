//! Geometric training augmentation, applied in the order rotate, flip,
//! resized crop. Out-of-bounds samples are zero in normalized space; no
//! intensity transform is ever applied.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

pub const MAX_ANGLE_DEG: f64 = 90.0;
pub const SCALE_RANGE: (f64, f64) = (0.5, 2.0);

/// Parameters of one augmentation draw.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    /// Rotation about the image center, degrees.
    pub angle_deg: f64,
    pub hflip: bool,
    pub vflip: bool,
    /// Crop window area relative to the image. Above 1 the window extends
    /// past the borders, which zooms out with zero padding.
    pub scale: f64,
    /// Window placement in `[0, 1]` along x and y; ½ centers it.
    pub offset: (f64, f64),
}

impl AugmentParams {
    pub const IDENTITY: Self = Self {
        angle_deg: 0.0,
        hflip: false,
        vflip: false,
        scale: 1.0,
        offset: (0.5, 0.5),
    };

    /// Angle `U[0°, 90°]`, each flip with probability ½, scale `U[0.5, 2]`,
    /// uniform window placement.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            angle_deg: rng.random_range(0.0..=MAX_ANGLE_DEG),
            hflip: rng.random_bool(0.5),
            vflip: rng.random_bool(0.5),
            scale: rng.random_range(SCALE_RANGE.0..=SCALE_RANGE.1),
            offset: (rng.random::<f64>(), rng.random::<f64>()),
        }
    }
}

/// Bilinear sample at index coordinates `(x, y)`; neighbours outside the
/// plane contribute zero.
fn sample_zero(plane: &[f32], w: usize, h: usize, x: f64, y: f64) -> f32 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = ((x - x0) as f32, (y - y0) as f32);
    let px = |xi: f64, yi: f64| -> f32 {
        if xi < 0.0 || yi < 0.0 || xi >= w as f64 || yi >= h as f64 {
            0.0
        } else {
            plane[yi as usize * w + xi as usize]
        }
    };
    let top = px(x0, y0) * (1.0 - fx) + px(x0 + 1.0, y0) * fx;
    let bottom = px(x0, y0 + 1.0) * (1.0 - fx) + px(x0 + 1.0, y0 + 1.0) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Resamples each channel through `map`, which takes output index
/// coordinates to source index coordinates.
fn remap(img: &Tensor, map: impl Fn(f64, f64) -> (f64, f64)) -> Tensor {
    let &[c, h, w] = img.shape() else {
        panic!("augment expects [channels, height, width]");
    };
    let mut out = Vec::with_capacity(c * h * w);
    for plane in img.data().chunks_exact(h * w) {
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = map(x as f64, y as f64);
                out.push(sample_zero(plane, w, h, sx, sy));
            }
        }
    }
    Tensor::new(vec![c, h, w], out).expect("shape")
}

pub fn rotate(img: &Tensor, angle_deg: f64) -> Tensor {
    if angle_deg == 0.0 {
        return img.clone();
    }
    let (h, w) = (img.shape()[1] as f64, img.shape()[2] as f64);
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let (cx, cy) = (w / 2.0, h / 2.0);
    remap(img, |x, y| {
        let (px, py) = (x + 0.5 - cx, y + 0.5 - cy);
        (cos * px + sin * py + cx - 0.5, -sin * px + cos * py + cy - 0.5)
    })
}

pub fn flip(img: &Tensor, horizontal: bool, vertical: bool) -> Tensor {
    let &[_, h, w] = img.shape() else {
        panic!("augment expects [channels, height, width]");
    };
    let mut out = img.clone();
    let src = img.data();
    for (dst, src) in out.data_mut().chunks_exact_mut(h * w).zip(src.chunks_exact(h * w)) {
        for y in 0..h {
            let sy = if vertical { h - 1 - y } else { y };
            for x in 0..w {
                let sx = if horizontal { w - 1 - x } else { x };
                dst[y * w + x] = src[sy * w + sx];
            }
        }
    }
    out
}

/// Square-aspect window of `scale ×` the image area, placed by `offset`,
/// resampled back to the input size.
pub fn resized_crop(img: &Tensor, scale: f64, offset: (f64, f64)) -> Tensor {
    let (h, w) = (img.shape()[1] as f64, img.shape()[2] as f64);
    let side = scale.sqrt();
    let (lw, lh) = (w * side, h * side);
    let (x0, y0) = (offset.0 * (w - lw), offset.1 * (h - lh));
    let (sx, sy) = (lw / w, lh / h);
    remap(img, |x, y| (x0 + (x + 0.5) * sx - 0.5, y0 + (y + 0.5) * sy - 0.5))
}

pub fn apply(img: &Tensor, p: &AugmentParams) -> Tensor {
    let img = rotate(img, p.angle_deg);
    let img = flip(&img, p.hflip, p.vflip);
    resized_crop(&img, p.scale, p.offset)
}

/// Draws parameters from `rng` and applies them.
pub fn augment<R: Rng + ?Sized>(img: &Tensor, rng: &mut R) -> Tensor {
    apply(img, &AugmentParams::sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fixture(h: usize, w: usize) -> Tensor {
        let data = (0..3 * h * w).map(|i| ((i * 37 % 101) as f32) / 50.0 - 1.0).collect();
        Tensor::new(vec![3, h, w], data).unwrap()
    }

    #[test]
    fn identity_parameters_are_identity() {
        let img = fixture(224, 224);
        let out = apply(&img, &AugmentParams::IDENTITY);
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn hflip_reverses_columns_exactly() {
        let img = fixture(5, 7);
        let out = apply(
            &img,
            &AugmentParams {
                hflip: true,
                ..AugmentParams::IDENTITY
            },
        );
        for c in 0..3 {
            for y in 0..5 {
                for x in 0..7 {
                    assert_eq!(out.data()[(c * 5 + y) * 7 + x], img.data()[(c * 5 + y) * 7 + 6 - x]);
                }
            }
        }
    }

    #[test]
    fn flips_preserve_pixel_multiset() {
        let img = fixture(9, 6);
        let out = flip(&img, true, true);
        let sorted = |t: &Tensor| {
            let mut v = t.data().to_vec();
            v.sort_by(f32::total_cmp);
            v
        };
        assert_eq!(sorted(&out), sorted(&img));
    }

    #[test]
    fn quarter_turn_of_square_permutes_pixels() {
        let img = fixture(6, 6);
        let out = rotate(&img, 90.0);
        for c in 0..3 {
            for y in 0..6 {
                for x in 0..6 {
                    let src = img.data()[(c * 6 + (5 - x)) * 6 + y];
                    assert!((out.data()[(c * 6 + y) * 6 + x] - src).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn zoom_out_pads_with_zeros() {
        let img = Tensor::full(&[1, 8, 8], 1.0f32);
        let out = resized_crop(&img, 4.0, (0.5, 0.5));
        // window is 16 wide and centered: the outer ring samples nothing
        assert_eq!(out.data()[0], 0.0);
        assert!((out.data()[4 * 8 + 4] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn sampled_parameters_respect_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (mut h, mut v) = (0, 0);
        for _ in 0..2000 {
            let p = AugmentParams::sample(&mut rng);
            assert!((0.0..=90.0).contains(&p.angle_deg));
            assert!((0.5..=2.0).contains(&p.scale));
            h += p.hflip as usize;
            v += p.vflip as usize;
        }
        assert!((900..1100).contains(&h) && (900..1100).contains(&v));
    }
}
