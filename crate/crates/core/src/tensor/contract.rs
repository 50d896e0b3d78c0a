use std::cell::Cell;

use super::{volume, Scalar, Tensor};
use crate::error::{Error, Result};

thread_local! {
    static MULTIPLICATIONS: Cell<u64> = const { Cell::new(0) };
}

/// Runs `f` and returns the number of scalar multiplications issued by
/// [`gemm`] on this thread while it ran.
pub fn count_multiplications<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let before = MULTIPLICATIONS.with(|c| c.get());
    let out = f();
    let after = MULTIPLICATIONS.with(|c| c.get());
    (out, after - before)
}

/// Borrowed strided matrix view.
#[derive(Clone, Copy, Debug)]
pub struct MatRef<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a, T> MatRef<'a, T> {
    pub fn row_major(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            row_stride: cols,
            col_stride: 1,
        }
    }

    /// Transposed view of a row-major `cols x rows` buffer.
    pub fn transposed(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            row_stride: 1,
            col_stride: rows,
        }
    }

    fn max_offset(&self) -> usize {
        (self.rows - 1) * self.row_stride + (self.cols - 1) * self.col_stride
    }
}

/// `c (m x n, row-major) <- a b (+ c if accumulate)`.
pub fn gemm<T: Scalar>(a: MatRef<'_, T>, b: MatRef<'_, T>, c: &mut [T], accumulate: bool) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert_eq!(k, b.rows, "gemm inner dimension");
    assert_eq!(c.len(), m * n, "gemm output size");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|x| *x = T::zero());
        }
        return;
    }
    assert!(a.max_offset() < a.data.len(), "gemm lhs view out of bounds");
    assert!(b.max_offset() < b.data.len(), "gemm rhs view out of bounds");
    MULTIPLICATIONS.with(|cnt| cnt.set(cnt.get() + (m * k * n) as u64));
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: both views were bounds-checked above, c is exactly m*n and is a
    // distinct &mut borrow.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

fn validate_axes(rank: usize, axes: &[usize], which: &str) -> Result<()> {
    let mut seen = vec![false; rank];
    for &ax in axes {
        if ax >= rank {
            return Err(Error::Axes(format!(
                "{which} axis {ax} out of range for rank {rank}"
            )));
        }
        if seen[ax] {
            return Err(Error::Axes(format!("{which} axis {ax} listed twice")));
        }
        seen[ax] = true;
    }
    Ok(())
}

/// Sums over the paired axes `a_axes[k] <-> b_axes[k]`.
///
/// The result holds the free axes of `a` in order followed by the free axes of
/// `b` in order. Internally the operands are brought into matrix form (free x
/// contracted, contracted x free) and multiplied with one [`gemm`]; operands
/// that are already in either orientation are used in place.
pub fn contract<T: Scalar>(
    a: &Tensor<T>,
    a_axes: &[usize],
    b: &Tensor<T>,
    b_axes: &[usize],
) -> Result<Tensor<T>> {
    if a_axes.len() != b_axes.len() {
        return Err(Error::Axes(format!(
            "{} axes paired with {}",
            a_axes.len(),
            b_axes.len()
        )));
    }
    validate_axes(a.rank(), a_axes, "lhs")?;
    validate_axes(b.rank(), b_axes, "rhs")?;
    for (&x, &y) in a_axes.iter().zip(b_axes) {
        if a.dims()[x] != b.dims()[y] {
            return Err(Error::AxisPair {
                a_axis: x,
                b_axis: y,
                a_size: a.dims()[x],
                b_size: b.dims()[y],
            });
        }
    }
    let a_free: Vec<usize> = (0..a.rank()).filter(|x| !a_axes.contains(x)).collect();
    let b_free: Vec<usize> = (0..b.rank()).filter(|x| !b_axes.contains(x)).collect();
    let m = volume(&a_free.iter().map(|&x| a.dims()[x]).collect::<Vec<_>>());
    let k = volume(&a_axes.iter().map(|&x| a.dims()[x]).collect::<Vec<_>>());
    let n = volume(&b_free.iter().map(|&x| b.dims()[x]).collect::<Vec<_>>());

    let a_rows_first: Vec<usize> = a_free.iter().chain(a_axes).copied().collect();
    let a_cols_first: Vec<usize> = a_axes.iter().chain(&a_free).copied().collect();
    let a_tmp;
    let a_view = if is_identity(&a_rows_first) {
        MatRef::row_major(a.data(), m, k)
    } else if is_identity(&a_cols_first) {
        MatRef::transposed(a.data(), m, k)
    } else {
        a_tmp = a.permute(&a_rows_first)?;
        MatRef::row_major(a_tmp.data(), m, k)
    };

    let b_rows_first: Vec<usize> = b_axes.iter().chain(&b_free).copied().collect();
    let b_cols_first: Vec<usize> = b_free.iter().chain(b_axes).copied().collect();
    let b_tmp;
    let b_view = if is_identity(&b_rows_first) {
        MatRef::row_major(b.data(), k, n)
    } else if is_identity(&b_cols_first) {
        MatRef::transposed(b.data(), k, n)
    } else {
        b_tmp = b.permute(&b_rows_first)?;
        MatRef::row_major(b_tmp.data(), k, n)
    };

    let mut out = vec![T::zero(); m * n];
    gemm(a_view, b_view, &mut out, false);
    let dims: Vec<usize> = a_free
        .iter()
        .map(|&x| a.dims()[x])
        .chain(b_free.iter().map(|&y| b.dims()[y]))
        .collect();
    Tensor::new(dims, out)
}

fn is_identity(order: &[usize]) -> bool {
    order.iter().enumerate().all(|(k, &x)| k == x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_times_vector() {
        let eye = Tensor::<f64>::eye(2);
        let v = Tensor::new(vec![2], vec![3.0, 5.0]).unwrap();
        let out = contract(&eye, &[1], &v, &[0]).unwrap();
        assert_eq!(out.data(), &[3.0, 5.0]);
    }

    #[test]
    fn self_contraction_over_two_axes_matches_loop() {
        let t = Tensor::new(vec![2, 2, 2], (0..8).map(f64::from).collect()).unwrap();
        let out = contract(&t, &[0, 1], &t, &[0, 1]).unwrap();
        assert_eq!(out.dims(), &[2, 2]);
        for p in 0..2 {
            for q in 0..2 {
                let mut s = 0.0;
                for i in 0..2 {
                    for j in 0..2 {
                        s += t.get(&[i, j, p]) * t.get(&[i, j, q]);
                    }
                }
                assert_eq!(out.get(&[p, q]), s);
            }
        }
        // (0,1,..) 0*0+2*2+4*4+6*6 = 56 on the diagonal corner
        assert_eq!(out.get(&[0, 0]), 56.0);
    }

    #[test]
    fn zero_operand_absorbs() {
        let a = Tensor::<f64>::from_fn(&[3, 2, 2], |i| (i[0] + 2 * i[1] + i[2]) as f64 - 1.5);
        let z = Tensor::<f64>::zeros(&[2, 4]);
        let out = contract(&a, &[2], &z, &[0]).unwrap();
        assert_eq!(out.dims(), &[3, 2, 4]);
        assert!(out.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn mismatched_pair_is_named() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[4, 2]);
        match contract(&a, &[1], &b, &[0]) {
            Err(Error::AxisPair {
                a_axis: 1,
                b_axis: 0,
                a_size: 3,
                b_size: 4,
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(contract(&a, &[0, 0], &b, &[1, 1]).is_err());
    }

    #[test]
    fn empty_pairing_is_outer_product() {
        let a = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(vec![3], vec![1.0, 10.0, 100.0]).unwrap();
        let (out, muls) = count_multiplications(|| contract(&a, &[], &b, &[]).unwrap());
        assert_eq!(out.data(), &[1.0, 10.0, 100.0, 2.0, 20.0, 200.0]);
        assert_eq!(muls, 6);
    }

    #[test]
    fn transposed_operands_are_used_in_place() {
        let a = Tensor::<f64>::from_fn(&[3, 4], |i| (i[0] * 4 + i[1]) as f64);
        let b = Tensor::<f64>::from_fn(&[5, 3], |i| (i[0] as f64) - (i[1] as f64) * 0.5);
        // contract a's axis 0 with b's axis 1: (4 x 5)
        let out = contract(&a, &[0], &b, &[1]).unwrap();
        for i in 0..4 {
            for j in 0..5 {
                let s: f64 = (0..3).map(|l| a.get(&[l, i]) * b.get(&[j, l])).sum();
                assert_eq!(out.get(&[i, j]), s);
            }
        }
    }
}
