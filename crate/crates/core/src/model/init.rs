//! Parameter initializers.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::tensor::{Scalar, Tensor};

/// Uniform Glorot initialization on `[-a, a]` with `a = √(6 / (fan_in + fan_out))`.
pub fn init_glorot<T: Scalar>(fan_in: usize, fan_out: usize, shape: &[usize], rng: &mut impl Rng) -> Tensor<T> {
    assert!(fan_in >= 1 && fan_out >= 1, "fans must be positive");
    let bound = glorot_bound(fan_in, fan_out);
    Tensor::from_fn(shape.to_vec(), |_| T::from_f64(rng.random_range(-bound..=bound)))
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Orthonormal `rows × cols` matrix from the QR factorization of a square
/// Gaussian matrix of the larger dimension, truncated. Columns are
/// orthonormal when `rows ≥ cols`, rows otherwise.
pub fn init_orthonormal<T: Scalar>(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor<T> {
    assert!(rows >= 1 && cols >= 1, "extents must be positive");
    let n = rows.max(cols);
    let g = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    // fix column signs so the distribution is uniform over orthogonal matrices
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Tensor::from_fn(vec![rows, cols], |idx| T::from_f64(q[(idx / cols, idx % cols)]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gram_deviation(t: &Tensor<f64>) -> f64 {
        let (r, c) = (t.shape()[0], t.shape()[1]);
        let m = DMatrix::from_row_slice(r, c, t.data());
        let g = if r >= c { m.transpose() * &m } else { &m * m.transpose() };
        let eye = DMatrix::<f64>::identity(g.nrows(), g.ncols());
        (g - eye).abs().max()
    }

    #[test]
    fn square_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q: Tensor<f64> = init_orthonormal(4, 4, &mut rng);
        assert!(gram_deviation(&q) <= 1e-6);
        let svd = DMatrix::from_row_slice(4, 4, q.data()).svd(false, false);
        assert!(svd.singular_values.iter().all(|s| (s - 1.0).abs() <= 1e-6));
    }

    #[test]
    fn one_by_one_is_unit() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q: Tensor<f64> = init_orthonormal(1, 1, &mut rng);
        assert!((q.data()[0].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rectangular_truncation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (r, c) in [(6, 3), (3, 6), (100, 100)] {
            let q: Tensor<f64> = init_orthonormal(r, c, &mut rng);
            assert!(gram_deviation(&q) <= 1e-6, "{r}x{c}");
        }
    }

    #[test]
    fn glorot_bound_and_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert_eq!(glorot_bound(3, 3), 1.0);
        let t: Tensor<f64> = init_glorot(3, 3, &[1000], &mut rng);
        assert!(t.data().iter().all(|v| (-1.0..=1.0).contains(v)));

        let (fi, fo) = (20, 30);
        let t: Tensor<f64> = init_glorot(fi, fo, &[100_000], &mut rng);
        let mean = t.sum() / t.len() as f64;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t.len() as f64;
        let want = 2.0 / (fi + fo) as f64;
        assert!((var - want).abs() / want < 0.05, "{var} vs {want}");
    }

    #[test]
    fn seeded_reproducible() {
        let a: Tensor<f32> = init_glorot(5, 7, &[5, 7], &mut ChaCha8Rng::seed_from_u64(9));
        let b: Tensor<f32> = init_glorot(5, 7, &[5, 7], &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }
}
