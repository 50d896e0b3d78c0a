use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Mixed-radix bijection between a `d^n x d^m` matrix and a rank `n + m`
/// tensor whose axes all have size `d`. The first digit is the most
/// significant one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisMap {
    pub row_modes: usize,
    pub col_modes: usize,
    pub mode_dim: usize,
}

impl AxisMap {
    pub fn new(row_modes: usize, col_modes: usize, mode_dim: usize) -> Self {
        Self {
            row_modes,
            col_modes,
            mode_dim,
        }
    }

    pub fn rows(&self) -> usize {
        self.mode_dim.pow(self.row_modes as u32)
    }

    pub fn cols(&self) -> usize {
        self.mode_dim.pow(self.col_modes as u32)
    }

    pub fn tensor_dims(&self) -> Vec<usize> {
        vec![self.mode_dim; self.row_modes + self.col_modes]
    }

    /// Splits a flat index into `modes` digits, most significant first.
    pub fn decode(&self, mut flat: usize, modes: usize) -> Vec<usize> {
        let mut digits = vec![0; modes];
        for slot in digits.iter_mut().rev() {
            *slot = flat % self.mode_dim;
            flat /= self.mode_dim;
        }
        digits
    }

    pub fn encode(&self, digits: &[usize]) -> usize {
        digits.iter().fold(0, |acc, &x| acc * self.mode_dim + x)
    }

    fn validate(&self) -> Result<()> {
        if self.mode_dim < 2 {
            return Err(Error::Shape(format!("mode dim {} < 2", self.mode_dim)));
        }
        if self.row_modes == 0 || self.col_modes == 0 {
            return Err(Error::Shape("matrix needs at least one mode per side".into()));
        }
        Ok(())
    }
}

/// Reads `w[A, B]` as element `(i1..in, j1..jm)` with `A = enc(i)`, `B = enc(j)`.
pub fn tensorize<T: Scalar>(w: &Tensor<T>, map: AxisMap) -> Result<Tensor<T>> {
    map.validate()?;
    if w.rank() != 2 {
        return Err(Error::Shape(format!("tensorize needs a matrix, got rank {}", w.rank())));
    }
    let (rows, cols) = (w.dims()[0], w.dims()[1]);
    if rows != map.rows() {
        if is_power(rows, map.mode_dim) {
            return Err(Error::Shape(format!(
                "{rows} rows but map expects {}^{}",
                map.mode_dim, map.row_modes
            )));
        }
        return Err(Error::NotPowerOf {
            len: rows,
            base: map.mode_dim,
        });
    }
    if cols != map.cols() {
        if is_power(cols, map.mode_dim) {
            return Err(Error::Shape(format!(
                "{cols} columns but map expects {}^{}",
                map.mode_dim, map.col_modes
            )));
        }
        return Err(Error::NotPowerOf {
            len: cols,
            base: map.mode_dim,
        });
    }
    // row-major with most-significant-first digits: the flat layout coincides
    w.reshaped(&map.tensor_dims())
}

/// Exact inverse of [`tensorize`].
pub fn matricize<T: Scalar>(t: &Tensor<T>, map: AxisMap) -> Result<Tensor<T>> {
    map.validate()?;
    if t.rank() != map.row_modes + map.col_modes {
        return Err(Error::Shape(format!(
            "rank {} tensor for a {}+{} mode map",
            t.rank(),
            map.row_modes,
            map.col_modes
        )));
    }
    if let Some((ax, &n)) = t.dims().iter().enumerate().find(|(_, &n)| n != map.mode_dim) {
        return Err(Error::Shape(format!(
            "axis {ax} has size {n}, map mode dim is {}",
            map.mode_dim
        )));
    }
    t.reshaped(&[map.rows(), map.cols()])
}

fn is_power(mut x: usize, base: usize) -> bool {
    if x == 0 {
        return false;
    }
    while x.is_multiple_of(base) {
        x /= base;
    }
    x == 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_2x2() {
        let w = Tensor::<f64>::eye(2);
        let t = tensorize(&w, AxisMap::new(1, 1, 2)).unwrap();
        assert_eq!(t, w);
    }

    #[test]
    fn iota_4x4_element() {
        let w = Tensor::new(vec![4, 4], (0..16).map(f64::from).collect()).unwrap();
        let t = tensorize(&w, AxisMap::new(2, 2, 2)).unwrap();
        // (i1,i2) = (0,1) -> A = 1, (j1,j2) = (1,0) -> B = 2
        assert_eq!(t.get(&[0, 1, 1, 0]), 6.0);
        assert_eq!(w.get(&[1, 2]), 6.0);
    }

    #[test]
    fn all_ones_rank4_matricizes_to_ones() {
        let t = Tensor::<f64>::ones(&[2, 2, 2, 2]);
        let m = matricize(&t, AxisMap::new(2, 2, 2)).unwrap();
        assert_eq!(m, Tensor::ones(&[4, 4]));
    }

    #[test]
    fn rank2_matricize_is_itself() {
        let t = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(matricize(&t, AxisMap::new(1, 1, 2)).unwrap(), t);
    }

    #[test]
    fn rejects_non_powers() {
        let w = Tensor::<f32>::zeros(&[6, 4]);
        assert!(matches!(
            tensorize(&w, AxisMap::new(2, 2, 2)),
            Err(Error::NotPowerOf { len: 6, base: 2 })
        ));
        let w = Tensor::<f32>::zeros(&[8, 4]);
        assert!(tensorize(&w, AxisMap::new(2, 2, 2)).is_err());
        let t = Tensor::<f32>::zeros(&[2, 3]);
        assert!(matricize(&t, AxisMap::new(1, 1, 2)).is_err());
    }

    #[test]
    fn decode_encode_identity() {
        let map = AxisMap::new(3, 2, 3);
        for a in 0..27 {
            assert_eq!(map.encode(&map.decode(a, 3)), a);
        }
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(d in 2usize..=4, n in 1usize..=4, m in 1usize..=4, seed in any::<u64>()) {
            let map = AxisMap::new(n, m, d);
            let mut s = seed;
            let w = Tensor::<f64>::from_fn(&[map.rows(), map.cols()], |_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            });
            let back = matricize(&tensorize(&w, map).unwrap(), map).unwrap();
            prop_assert_eq!(back, w);
        }
    }
}
