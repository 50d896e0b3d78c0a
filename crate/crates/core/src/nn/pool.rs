use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Output size and leading pad for "same" pooling: `ceil(len / stride)`
/// windows, padding split with the smaller half in front.
fn same_geometry(len: usize, window: usize, stride: usize) -> (usize, usize) {
    let out = len.div_ceil(stride);
    let total = ((out - 1) * stride + window).saturating_sub(len);
    (out, total / 2)
}

/// Max pooling on NHWC with "same" padding. Padded cells never win, so the
/// output of a 32-pixel side is 16 for window 3 and stride 2.
///
/// Returns the pooled tensor and, per output element, the flat input offset of
/// its maximum (first in row-major window order on ties).
pub fn maxpool_forward<T: Scalar>(
    x: &Tensor<T>,
    window: usize,
    stride: usize,
) -> Result<(Tensor<T>, Vec<usize>)> {
    if x.rank() != 4 {
        return Err(Error::Shape(format!("maxpool expects NHWC, got {:?}", x.dims())));
    }
    if window == 0 || stride == 0 {
        return Err(Error::Shape("pool window and stride must be positive".into()));
    }
    let (n, h, w, c) = (x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]);
    let (oh, pt) = same_geometry(h, window, stride);
    let (ow, pl) = same_geometry(w, window, stride);
    let xd = x.data();
    let mut out = Vec::with_capacity(n * oh * ow * c);
    let mut argmax = Vec::with_capacity(n * oh * ow * c);
    for b in 0..n {
        for oy in 0..oh {
            let y0 = (oy * stride) as isize - pt as isize;
            for ox in 0..ow {
                let x0 = (ox * stride) as isize - pl as isize;
                for ch in 0..c {
                    let mut best: Option<(T, usize)> = None;
                    for ky in 0..window as isize {
                        let sy = y0 + ky;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for kx in 0..window as isize {
                            let sx = x0 + kx;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            let off = ((b * h + sy as usize) * w + sx as usize) * c + ch;
                            let v = xd[off];
                            if best.is_none_or(|(bv, _)| v > bv) {
                                best = Some((v, off));
                            }
                        }
                    }
                    let (v, off) = best.expect("window overlaps the image");
                    out.push(v);
                    argmax.push(off);
                }
            }
        }
    }
    Ok((Tensor::new(vec![n, oh, ow, c], out)?, argmax))
}

/// Routes each upstream gradient to the input position that won its window.
pub fn maxpool_backward<T: Scalar>(
    grad_y: &Tensor<T>,
    argmax: &[usize],
    input_dims: &[usize],
) -> Result<Tensor<T>> {
    if grad_y.len() != argmax.len() {
        return Err(Error::Shape(format!(
            "{} upstream values for {} pooled outputs",
            grad_y.len(),
            argmax.len()
        )));
    }
    let mut gx = Tensor::zeros(input_dims);
    let data = gx.data_mut();
    for (&g, &off) in grad_y.data().iter().zip(argmax) {
        data[off] += g;
    }
    Ok(gx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halves_cifar_sides() {
        let x = Tensor::<f32>::zeros(&[1, 32, 32, 2]);
        let (y, _) = maxpool_forward(&x, 3, 2).unwrap();
        assert_eq!(y.dims(), &[1, 16, 16, 2]);
        let (y, _) = maxpool_forward(&Tensor::<f32>::zeros(&[1, 8, 8, 1]), 3, 2).unwrap();
        assert_eq!(y.dims(), &[1, 4, 4, 1]);
    }

    #[test]
    fn constant_input_constant_output() {
        let x = Tensor::<f64>::full(&[2, 6, 6, 3], -1.5);
        let (y, _) = maxpool_forward(&x, 3, 2).unwrap();
        assert!(y.data().iter().all(|&v| v == -1.5));
    }

    #[test]
    fn single_peak_reaches_every_covering_window() {
        let mut x = Tensor::<f64>::zeros(&[1, 4, 4, 1]);
        x.set(&[0, 1, 1, 0], 9.0);
        let (y, _) = maxpool_forward(&x, 3, 2).unwrap();
        // windows start at rows/cols 0 and 2; only those starting at 0 cover (1, 1)
        assert_eq!(y.get(&[0, 0, 0, 0]), 9.0);
        assert_eq!(y.get(&[0, 0, 1, 0]), 0.0);
        assert_eq!(y.get(&[0, 1, 0, 0]), 0.0);
        assert_eq!(y.get(&[0, 1, 1, 0]), 0.0);
    }

    #[test]
    fn monotone_rows_stay_monotone() {
        let x = Tensor::<f64>::from_fn(&[1, 7, 9, 1], |i| (i[2] * 3 + i[1]) as f64);
        let (y, _) = maxpool_forward(&x, 3, 2).unwrap();
        for r in 0..y.dims()[1] {
            for s in 1..y.dims()[2] {
                assert!(y.get(&[0, r, s, 0]) >= y.get(&[0, r, s - 1, 0]));
            }
        }
    }

    #[test]
    fn backward_goes_to_first_argmax() {
        let x = Tensor::<f64>::full(&[1, 3, 3, 1], 1.0);
        let (_, arg) = maxpool_forward(&x, 3, 2).unwrap();
        let g = maxpool_backward(&Tensor::full(&[1, 2, 2, 1], 1.0), &arg, x.dims()).unwrap();
        // one cell of leading pad: windows start at -1 and 1 on each axis
        assert_eq!(g.get(&[0, 0, 0, 0]), 1.0);
        assert_eq!(g.get(&[0, 0, 1, 0]), 1.0);
        assert_eq!(g.get(&[0, 1, 0, 0]), 1.0);
        assert_eq!(g.get(&[0, 1, 1, 0]), 1.0);
        assert_eq!(g.sum(), 4.0);
    }
}
