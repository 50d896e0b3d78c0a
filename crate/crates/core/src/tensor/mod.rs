//! Dense row-major tensors and the handful of operations every layer is built
//! from: reshape, axis permutation and pairwise contraction.
//!
//! Multi-indices are encoded most-significant-first, so the flat offset of
//! `(i0, i1, .., ik)` in a tensor with dims `(n0, n1, .., nk)` is
//! `((i0 * n1 + i1) * n2 + ..) * nk + ik`.

mod axis;
mod contract;
mod io;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;

use crate::error::{Error, Result};

pub use axis::{matricize, tensorize, AxisMap};
pub use contract::{contract, count_multiplications, gemm, MatRef};
pub use io::{read_tensor, write_tensor, DType, TENSOR_MAGIC};

/// Floating point element type of a [`Tensor`].
pub trait Scalar:
    Float
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    const DTYPE: DType;

    fn of(x: f64) -> Self;

    fn as_f64(self) -> f64;

    /// Raw IEEE bit pattern, widened to 64 bits.
    fn bits(self) -> u64;

    /// `c <- alpha * a b + beta * c` on strided matrices.
    ///
    /// # Safety
    /// Every index reachable through the given dims and strides must be in
    /// bounds of its buffer, and `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn write_le(self, out: &mut Vec<u8>);

    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const DTYPE: DType = DType::F32;

    fn of(x: f64) -> Self {
        x as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    fn bits(self) -> u64 {
        self.to_bits() as u64
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const DTYPE: DType = DType::F64;

    fn of(x: f64) -> Self {
        x
    }

    fn as_f64(self) -> f64 {
        self
    }

    fn bits(self) -> u64 {
        self.to_bits()
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
    }
}

/// Dense tensor with explicit axis sizes. Rank 0 is a scalar.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    dims: Vec<usize>,
    data: Vec<T>,
}

pub(crate) fn volume(dims: &[usize]) -> usize {
    dims.iter().product()
}

pub(crate) fn row_major_strides(dims: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; dims.len()];
    for k in (0..dims.len().saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * dims[k + 1];
    }
    strides
}

impl<T: Scalar> Tensor<T> {
    pub fn new(dims: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::Shape(format!("zero-sized axis in {dims:?}")));
        }
        if volume(&dims) != data.len() {
            return Err(Error::Shape(format!(
                "dims {dims:?} need {} elements, got {}",
                volume(&dims),
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn full(dims: &[usize], value: T) -> Self {
        assert!(!dims.contains(&0), "zero-sized axis in {dims:?}");
        Self {
            dims: dims.to_vec(),
            data: vec![value; volume(dims)],
        }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::full(dims, T::zero())
    }

    pub fn ones(dims: &[usize]) -> Self {
        Self::full(dims, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self {
            dims: Vec::new(),
            data: vec![value],
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    /// Builds a tensor by evaluating `f` at every multi-index in row-major order.
    pub fn from_fn(dims: &[usize], mut f: impl FnMut(&[usize]) -> T) -> Self {
        let mut t = Self::zeros(dims);
        let mut idx = vec![0; dims.len()];
        for slot in t.data.iter_mut() {
            *slot = f(&idx);
            for ax in (0..dims.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < dims[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        t
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.rank(), "index rank");
        index.iter().zip(&self.dims).fold(0, |acc, (&i, &n)| {
            assert!(i < n, "index {i} out of range for axis of size {n}");
            acc * n + i
        })
    }

    pub fn get(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: T) {
        let at = self.offset(index);
        self.data[at] = value;
    }

    pub fn reshape(self, dims: &[usize]) -> Result<Self> {
        Self::new(dims.to_vec(), self.data)
    }

    pub fn reshaped(&self, dims: &[usize]) -> Result<Self> {
        self.clone().reshape(dims)
    }

    /// Returns the tensor whose axis `k` is axis `perm[k]` of `self`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.rank())?;
        if perm.iter().enumerate().all(|(k, &p)| k == p) {
            return Ok(self.clone());
        }
        let src_strides = row_major_strides(&self.dims);
        let dims: Vec<usize> = perm.iter().map(|&p| self.dims[p]).collect();
        let strides: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();
        let mut data = Vec::with_capacity(self.data.len());
        let rank = dims.len();
        let inner = dims[rank - 1];
        let inner_stride = strides[rank - 1];
        let mut idx = vec![0usize; rank - 1];
        let mut base = 0usize;
        loop {
            if inner_stride == 1 {
                data.extend_from_slice(&self.data[base..base + inner]);
            } else {
                data.extend((0..inner).map(|j| self.data[base + j * inner_stride]));
            }
            // odometer over the outer axes, tracking the source offset
            let mut ax = rank - 1;
            loop {
                if ax == 0 {
                    return Ok(Self { dims, data });
                }
                ax -= 1;
                idx[ax] += 1;
                base += strides[ax];
                if idx[ax] < dims[ax] {
                    break;
                }
                base -= strides[ax] * dims[ax];
                idx[ax] = 0;
            }
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.dims != other.dims {
            return Err(Error::Shape(format!(
                "elementwise op on {:?} and {:?}",
                self.dims, other.dims
            )));
        }
        Ok(Self {
            dims: self.dims.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scale(&self, factor: T) -> Self {
        self.map(|x| x * factor)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::Shape(format!(
                "accumulate {:?} into {:?}",
                other.dims, self.dims
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.dims, other.dims, "max_abs_diff shape");
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&x| U::of(x.as_f64())).collect(),
        }
    }

    /// Copies out the sub-tensor with `axis` pinned to `index`; the axis is kept
    /// with size 1.
    pub fn select(&self, axis: usize, index: usize) -> Result<Self> {
        if axis >= self.rank() || index >= self.dims[axis] {
            return Err(Error::Axes(format!(
                "select axis {axis} index {index} on dims {:?}",
                self.dims
            )));
        }
        let outer: usize = volume(&self.dims[..axis]);
        let inner: usize = volume(&self.dims[axis + 1..]);
        let n = self.dims[axis];
        let mut data = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            let start = (o * n + index) * inner;
            data.extend_from_slice(&self.data[start..start + inner]);
        }
        let mut dims = self.dims.clone();
        dims[axis] = 1;
        Ok(Self { dims, data })
    }

    /// Matrix transpose of a rank-2 tensor.
    pub fn t(&self) -> Result<Self> {
        if self.rank() != 2 {
            return Err(Error::Shape(format!("transpose of rank {}", self.rank())));
        }
        self.permute(&[1, 0])
    }

    /// Rank-2 matrix product.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.rank() != 2 || other.rank() != 2 {
            return Err(Error::Shape(format!(
                "matmul of {:?} and {:?}",
                self.dims, other.dims
            )));
        }
        contract(self, &[1], other, &[0])
    }
}

pub(crate) fn check_permutation(perm: &[usize], rank: usize) -> Result<()> {
    let mut seen = vec![false; rank];
    let ok = perm.len() == rank
        && perm.iter().all(|&p| {
            if p < rank && !seen[p] {
                seen[p] = true;
                true
            } else {
                false
            }
        });
    if ok {
        Ok(())
    } else {
        Err(Error::Permutation(perm.to_vec(), rank))
    }
}

/// Inverse of a permutation given as `perm[k] = source axis`.
pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (k, &p) in perm.iter().enumerate() {
        inv[p] = k;
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iota(dims: &[usize]) -> Tensor<f64> {
        let n = volume(dims);
        Tensor::new(dims.to_vec(), (0..n).map(|x| x as f64).collect()).unwrap()
    }

    #[test]
    fn identity_permutation_is_a_copy() {
        let t = iota(&[2, 3, 4]);
        assert_eq!(t.permute(&[0, 1, 2]).unwrap(), t);
    }

    #[test]
    fn transpose_of_2x3() {
        let t = Tensor::new(vec![2, 3], (1..=6).map(f64::from).collect()).unwrap();
        let p = t.permute(&[1, 0]).unwrap();
        assert_eq!(p.dims(), &[3, 2]);
        for i in 0..2 {
            for j in 0..3 {
                assert_eq!(p.get(&[j, i]), t.get(&[i, j]));
            }
        }
    }

    #[test]
    fn permute_rejects_non_permutations() {
        let t = iota(&[2, 2]);
        assert!(matches!(t.permute(&[0, 0]), Err(Error::Permutation(..))));
        assert!(t.permute(&[0]).is_err());
        assert!(t.permute(&[0, 2]).is_err());
    }

    #[test]
    fn permute_matches_index_definition() {
        let t = iota(&[2, 3, 4, 5]);
        let perm = [2, 0, 3, 1];
        let p = t.permute(&perm).unwrap();
        assert_eq!(p.dims(), &[4, 2, 5, 3]);
        for a in 0..2 {
            for b in 0..3 {
                for c in 0..4 {
                    for d in 0..5 {
                        let src = [a, b, c, d];
                        let dst: Vec<usize> = perm.iter().map(|&q| src[q]).collect();
                        assert_eq!(p.get(&dst), t.get(&src));
                    }
                }
            }
        }
    }

    #[test]
    fn new_validates_length() {
        assert!(Tensor::<f32>::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::<f32>::new(vec![2, 0], vec![]).is_err());
        let s = Tensor::<f32>::new(vec![], vec![1.5]).unwrap();
        assert_eq!(s.rank(), 0);
    }

    #[test]
    fn select_keeps_axis() {
        let t = iota(&[2, 3, 2]);
        let s = t.select(1, 2).unwrap();
        assert_eq!(s.dims(), &[2, 1, 2]);
        assert_eq!(s.data(), &[4.0, 5.0, 10.0, 11.0]);
    }
}
