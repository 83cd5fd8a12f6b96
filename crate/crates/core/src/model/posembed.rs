use crate::tensor::{Real, Tensor};

/// Fixed 2-D sine-cosine table of shape `[grid² + 1, dim]`.
///
/// Row 0 belongs to the class token and is all zeros; patch `p` uses row
/// `p + 1`. The first half of each row encodes the grid row, the second half
/// the grid column, each as `[sin(pos·ω), cos(pos·ω)]` with
/// `ω_i = 10000^(-i / (dim/4))`. `dim` must be a multiple of 4.
pub fn sincos_2d<T: Real>(dim: usize, grid: usize) -> Tensor<T> {
    assert!(dim.is_multiple_of(4), "positional width must be a multiple of 4");
    let quarter = dim / 4;
    let omega: Vec<f64> = (0..quarter)
        .map(|i| 1.0 / 10000f64.powf(i as f64 / quarter as f64))
        .collect();
    let mut data = vec![T::zero(); dim];
    for r in 0..grid {
        for c in 0..grid {
            for pos in [r as f64, c as f64] {
                data.extend(omega.iter().map(|w| T::lit((pos * w).sin())));
                data.extend(omega.iter().map(|w| T::lit((pos * w).cos())));
            }
        }
    }
    Tensor::new(vec![grid * grid + 1, dim], data).expect("table size")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_row_is_zero_and_rows_are_distinct() {
        let t = sincos_2d::<f64>(8, 3);
        assert_eq!(t.shape(), &[10, 8]);
        assert!(t.data()[..8].iter().all(|&v| v == 0.0));
        let rows: Vec<&[f64]> = t.data().chunks(8).skip(1).collect();
        for i in 0..rows.len() {
            for j in i + 1..rows.len() {
                assert_ne!(rows[i], rows[j]);
            }
        }
        // patch (0, 0): sin terms 0, cos terms 1
        assert_eq!(&t.data()[8..16], &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0]);
    }
}
