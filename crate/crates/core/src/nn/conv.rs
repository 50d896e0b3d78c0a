//! Stride-1 "same" convolution (cross-correlation) on NHWC batches.

use crate::error::{Error, Result};
use crate::tensor::{gemm, MatRef, Scalar, Tensor};

struct Geometry {
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    kh: usize,
    kw: usize,
    cout: usize,
}

impl Geometry {
    fn of<T: Scalar>(x: &Tensor<T>, k: &Tensor<T>) -> Result<Self> {
        if x.rank() != 4 || k.rank() != 4 {
            return Err(Error::Shape(format!(
                "conv2d expects NHWC input and (kh, kw, cin, cout) kernel, got {:?} and {:?}",
                x.dims(),
                k.dims()
            )));
        }
        let (kh, kw) = (k.dims()[0], k.dims()[1]);
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::Shape(format!("same padding needs odd kernels, got {kh}x{kw}")));
        }
        if x.dims()[3] != k.dims()[2] {
            return Err(Error::Shape(format!(
                "channel mismatch: input has {}, kernel expects {}",
                x.dims()[3],
                k.dims()[2]
            )));
        }
        Ok(Self {
            n: x.dims()[0],
            h: x.dims()[1],
            w: x.dims()[2],
            c: x.dims()[3],
            kh,
            kw,
            cout: k.dims()[3],
        })
    }

    fn rows(&self) -> usize {
        self.n * self.h * self.w
    }

    fn patch(&self) -> usize {
        self.kh * self.kw * self.c
    }
}

/// Rows are output pixels, columns run over `(ky, kx, channel)`.
fn im2col<T: Scalar>(x: &[T], g: &Geometry) -> Vec<T> {
    let (ph, pw) = (g.kh / 2, g.kw / 2);
    let patch = g.patch();
    let mut cols = vec![T::zero(); g.rows() * patch];
    for b in 0..g.n {
        for y in 0..g.h {
            for xx in 0..g.w {
                let row = ((b * g.h + y) * g.w + xx) * patch;
                for ky in 0..g.kh {
                    let sy = y + ky;
                    if sy < ph || sy - ph >= g.h {
                        continue;
                    }
                    let sy = sy - ph;
                    for kx in 0..g.kw {
                        let sx = xx + kx;
                        if sx < pw || sx - pw >= g.w {
                            continue;
                        }
                        let sx = sx - pw;
                        let src = ((b * g.h + sy) * g.w + sx) * g.c;
                        let dst = row + (ky * g.kw + kx) * g.c;
                        cols[dst..dst + g.c].copy_from_slice(&x[src..src + g.c]);
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &[T], g: &Geometry) -> Vec<T> {
    let (ph, pw) = (g.kh / 2, g.kw / 2);
    let patch = g.patch();
    let mut x = vec![T::zero(); g.n * g.h * g.w * g.c];
    for b in 0..g.n {
        for y in 0..g.h {
            for xx in 0..g.w {
                let row = ((b * g.h + y) * g.w + xx) * patch;
                for ky in 0..g.kh {
                    let sy = y + ky;
                    if sy < ph || sy - ph >= g.h {
                        continue;
                    }
                    let sy = sy - ph;
                    for kx in 0..g.kw {
                        let sx = xx + kx;
                        if sx < pw || sx - pw >= g.w {
                            continue;
                        }
                        let sx = sx - pw;
                        let dst = ((b * g.h + sy) * g.w + sx) * g.c;
                        let src = row + (ky * g.kw + kx) * g.c;
                        for (d, &s) in x[dst..dst + g.c].iter_mut().zip(&cols[src..src + g.c]) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
    x
}

/// `y[b, y, x, o] = sum_{ky, kx, c} x[b, y + ky - 1, x + kx - 1, c] k[ky, kx, c, o]`
/// for 3x3 kernels, zero outside the image.
pub fn conv2d_forward<T: Scalar>(x: &Tensor<T>, k: &Tensor<T>) -> Result<Tensor<T>> {
    let g = Geometry::of(x, k)?;
    let cols = im2col(x.data(), &g);
    let mut out = vec![T::zero(); g.rows() * g.cout];
    gemm(
        MatRef::row_major(&cols, g.rows(), g.patch()),
        MatRef::row_major(k.data(), g.patch(), g.cout),
        &mut out,
        false,
    );
    Tensor::new(vec![g.n, g.h, g.w, g.cout], out)
}

/// Returns `(grad_x, grad_k)`; `grad_x` only when requested.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    k: &Tensor<T>,
    grad_y: &Tensor<T>,
    want_grad_x: bool,
) -> Result<(Option<Tensor<T>>, Tensor<T>)> {
    let g = Geometry::of(x, k)?;
    if grad_y.dims() != [g.n, g.h, g.w, g.cout] {
        return Err(Error::Shape(format!("conv2d upstream gradient {:?}", grad_y.dims())));
    }
    let cols = im2col(x.data(), &g);
    let mut gk = vec![T::zero(); g.patch() * g.cout];
    gemm(
        MatRef::transposed(&cols, g.patch(), g.rows()),
        MatRef::row_major(grad_y.data(), g.rows(), g.cout),
        &mut gk,
        false,
    );
    let gx = if want_grad_x {
        let mut gcols = vec![T::zero(); g.rows() * g.patch()];
        gemm(
            MatRef::row_major(grad_y.data(), g.rows(), g.cout),
            MatRef::transposed(k.data(), g.cout, g.patch()),
            &mut gcols,
            false,
        );
        Some(Tensor::new(x.dims().to_vec(), col2im(&gcols, &g))?)
    } else {
        None
    };
    Ok((gx, Tensor::new(k.dims().to_vec(), gk)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(x: &Tensor<f64>, k: &Tensor<f64>) -> Tensor<f64> {
        let (n, h, w, c) = (x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]);
        let cout = k.dims()[3];
        Tensor::from_fn(&[n, h, w, cout], |i| {
            let mut s = 0.0;
            for ky in 0..3 {
                for kx in 0..3 {
                    let sy = i[1] as isize + ky as isize - 1;
                    let sx = i[2] as isize + kx as isize - 1;
                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                        continue;
                    }
                    for ch in 0..c {
                        s += x.get(&[i[0], sy as usize, sx as usize, ch]) * k.get(&[ky, kx, ch, i[3]]);
                    }
                }
            }
            s
        })
    }

    #[test]
    fn delta_kernel_is_identity() {
        let x = Tensor::<f64>::from_fn(&[2, 5, 4, 1], |i| (i[0] * 31 + i[1] * 7 + i[2]) as f64 * 0.1);
        let mut k = Tensor::zeros(&[3, 3, 1, 1]);
        k.set(&[1, 1, 0, 0], 1.0);
        assert_eq!(conv2d_forward(&x, &k).unwrap(), x);
    }

    #[test]
    fn ones_kernel_on_constant_interior() {
        let c = 2.5;
        let x = Tensor::<f64>::full(&[1, 6, 6, 1], c);
        let k = Tensor::ones(&[3, 3, 1, 1]);
        let y = conv2d_forward(&x, &k).unwrap();
        for r in 1..5 {
            for s in 1..5 {
                assert_eq!(y.get(&[0, r, s, 0]), 9.0 * c);
            }
        }
        assert_eq!(y.get(&[0, 0, 0, 0]), 4.0 * c);
    }

    #[test]
    fn matches_naive_loop_with_channels() {
        let x = Tensor::<f64>::from_fn(&[2, 4, 5, 3], |i| ((i[0] + 2 * i[1] + 3 * i[2] + 5 * i[3]) % 7) as f64 - 3.0);
        let k = Tensor::<f64>::from_fn(&[3, 3, 3, 2], |i| ((i[0] * 3 + i[1] + i[2] * 2 + i[3]) % 5) as f64 - 2.0);
        assert_eq!(conv2d_forward(&x, &k).unwrap(), naive(&x, &k));
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let x = Tensor::<f32>::zeros(&[1, 4, 4, 2]);
        let k = Tensor::<f32>::zeros(&[3, 3, 3, 1]);
        assert!(conv2d_forward(&x, &k).is_err());
    }
}
