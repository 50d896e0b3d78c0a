//! Parameter initialization.
//!
//! Random orthogonal matrices are grown one dimension at a time: a `k x k`
//! matrix is the Householder reflector of a fresh Gaussian `k`-vector applied
//! to the previous `(k-1) x (k-1)` matrix embedded in the lower-right corner.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Seeded generator that hands out independent streams, one per parameter
/// tensor, so initialization never depends on evaluation order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rng {
    pub seed: u64,
}

pub type StreamRng = ChaCha8Rng;

impl Rng {
    pub const ALGORITHM: &'static str = "chacha8";

    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn stream(&self, id: u64) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(id);
        rng
    }
}

fn gaussian(rng: &mut impl RngCore) -> f64 {
    StandardNormal.sample(rng)
}

/// Random `n x n` orthogonal matrix (fp64).
pub fn random_orthogonal(n: usize, rng: &mut impl RngCore) -> Result<Tensor<f64>> {
    if n == 0 {
        return Err(Error::Shape("orthogonal matrix of dimension 0".into()));
    }
    let sign = |x: f64| if x < 0.0 { -1.0 } else { 1.0 };
    let mut q = vec![sign(gaussian(rng))];
    for k in 2..=n {
        let mut u: Vec<f64> = (0..k).map(|_| gaussian(rng)).collect();
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        let s = sign(u[0]);
        u[0] += s * norm;
        let uu: f64 = u.iter().map(|x| x * x).sum();

        // diag(-s, q_prev) as a k x k row-major matrix
        let mut m = vec![0.0; k * k];
        m[0] = -s;
        for i in 1..k {
            m[i * k + 1..i * k + k].copy_from_slice(&q[(i - 1) * (k - 1)..i * (k - 1)]);
        }
        // m <- (I - 2 u u^T / u^T u) m
        if uu > 0.0 {
            let mut ut_m = vec![0.0; k];
            for (i, &ui) in u.iter().enumerate() {
                for (j, acc) in ut_m.iter_mut().enumerate() {
                    *acc += ui * m[i * k + j];
                }
            }
            let c = 2.0 / uu;
            for (i, &ui) in u.iter().enumerate() {
                for j in 0..k {
                    m[i * k + j] -= c * ui * ut_m[j];
                }
            }
        }
        q = m;
    }
    Tensor::new(vec![n, n], q)
}

/// Node tensor with axes `in_dims ++ out_dims` whose `p x q` matricization is
/// the leading block of a random `max(p, q)` orthogonal matrix.
pub fn init_orthogonal_node<T: Scalar>(
    in_dims: &[usize],
    out_dims: &[usize],
    rng: &mut impl RngCore,
) -> Result<Tensor<T>> {
    if in_dims.iter().chain(out_dims).any(|&n| n == 0) {
        return Err(Error::Shape("zero-sized node leg".into()));
    }
    let p: usize = in_dims.iter().product();
    let q: usize = out_dims.iter().product();
    let big = random_orthogonal(p.max(q), rng)?;
    let n = p.max(q);
    let mut data = Vec::with_capacity(p * q);
    for i in 0..p {
        data.extend(big.data()[i * n..i * n + q].iter().map(|&x| T::of(x)));
    }
    let dims: Vec<usize> = in_dims.iter().chain(out_dims).copied().collect();
    Tensor::new(dims, data)
}

/// I.i.d. Gaussian entries with standard deviation `1 / sqrt(fan_in)`.
pub fn init_gaussian_fanin<T: Scalar>(
    dims: &[usize],
    fan_in: usize,
    rng: &mut impl RngCore,
) -> Result<Tensor<T>> {
    if fan_in == 0 {
        return Err(Error::Shape("fan-in of 0".into()));
    }
    let sigma = 1.0 / (fan_in as f64).sqrt();
    let n: usize = dims.iter().product();
    let data = (0..n).map(|_| T::of(sigma * gaussian(rng))).collect();
    Tensor::new(dims.to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::contract;

    fn orthogonality_error(q: &Tensor<f64>) -> f64 {
        let qtq = contract(q, &[0], q, &[0]).unwrap();
        qtq.max_abs_diff(&Tensor::eye(q.dims()[1]))
    }

    #[test]
    fn base_case_is_sign() {
        for s in 0..8 {
            let q = random_orthogonal(1, &mut Rng::new(s).stream(0)).unwrap();
            assert_eq!(q.data()[0].abs(), 1.0);
        }
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(random_orthogonal(0, &mut Rng::new(0).stream(0)).is_err());
    }

    #[test]
    fn four_by_four_is_orthogonal() {
        for seed in 0..20 {
            let q = random_orthogonal(4, &mut Rng::new(seed).stream(3)).unwrap();
            assert!(orthogonality_error(&q) <= 1e-12);
        }
    }

    #[test]
    fn different_seeds_differ() {
        let a = random_orthogonal(16, &mut Rng::new(1).stream(0)).unwrap();
        let b = random_orthogonal(16, &mut Rng::new(2).stream(0)).unwrap();
        assert!(a.max_abs_diff(&b) > 0.1);
    }

    #[test]
    fn streams_are_independent_and_reproducible() {
        let rng = Rng::new(7);
        let a = random_orthogonal(8, &mut rng.stream(0)).unwrap();
        let b = random_orthogonal(8, &mut rng.stream(1)).unwrap();
        let a2 = random_orthogonal(8, &mut rng.stream(0)).unwrap();
        assert_eq!(a, a2);
        assert!(a.max_abs_diff(&b) > 0.1);
    }

    #[test]
    fn column_norms_are_one() {
        let q = random_orthogonal(10, &mut Rng::new(5).stream(0)).unwrap();
        for j in 0..10 {
            let norm: f64 = (0..10).map(|i| q.get(&[i, j]).powi(2)).sum();
            assert!((norm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn square_rank4_node_is_orthogonal() {
        let t: Tensor<f32> = init_orthogonal_node(&[2, 2], &[2, 2], &mut Rng::new(3).stream(0)).unwrap();
        let m = t.reshaped(&[4, 4]).unwrap().cast::<f64>();
        assert!(orthogonality_error(&m) <= 1e-6);
    }

    #[test]
    fn rank6_node_is_orthogonal() {
        let t: Tensor<f64> =
            init_orthogonal_node(&[2, 2, 2], &[2, 2, 2], &mut Rng::new(3).stream(9)).unwrap();
        assert_eq!(t.dims(), &[2, 2, 2, 2, 2, 2]);
        let m = t.reshaped(&[8, 8]).unwrap();
        assert!(orthogonality_error(&m) <= 1e-6);
    }

    #[test]
    fn tall_block_has_orthonormal_columns_and_wide_block_orthonormal_rows() {
        let tall: Tensor<f64> = init_orthogonal_node(&[3, 2], &[2], &mut Rng::new(1).stream(0)).unwrap();
        let m = tall.reshaped(&[6, 2]).unwrap();
        assert!(orthogonality_error(&m) <= 1e-12);
        let wide: Tensor<f64> = init_orthogonal_node(&[2], &[2, 3], &mut Rng::new(1).stream(0)).unwrap();
        let m = wide.reshaped(&[2, 6]).unwrap();
        let mmt = contract(&m, &[1], &m, &[1]).unwrap();
        assert!(mmt.max_abs_diff(&Tensor::eye(2)) <= 1e-12);
    }

    #[test]
    fn node_init_is_deterministic() {
        let a: Tensor<f32> = init_orthogonal_node(&[2, 2], &[2, 2], &mut Rng::new(11).stream(4)).unwrap();
        let b: Tensor<f32> = init_orthogonal_node(&[2, 2], &[2, 2], &mut Rng::new(11).stream(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gaussian_fanin_statistics() {
        let n = 1_000_000;
        let t: Tensor<f64> = init_gaussian_fanin(&[n], 4096, &mut Rng::new(42).stream(0)).unwrap();
        let mean = t.sum() / n as f64;
        let var = t.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        let sigma = 1.0 / 64.0;
        assert!((var.sqrt() - sigma).abs() <= 0.02 * sigma, "sigma {}", var.sqrt());
        assert!(mean.abs() <= 3.0 * sigma / (n as f64).sqrt(), "mean {mean}");
        let again: Tensor<f64> = init_gaussian_fanin(&[n], 4096, &mut Rng::new(42).stream(0)).unwrap();
        assert_eq!(t, again);
    }
}
