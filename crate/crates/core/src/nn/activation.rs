use rand::Rng as _;
use rand::RngCore;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const LEAK: f64 = 0.2;

pub fn lrelu<T: Scalar>(x: &Tensor<T>, leak: T) -> Tensor<T> {
    x.map(|v| if v >= T::zero() { v } else { leak * v })
}

pub fn lrelu_backward<T: Scalar>(x: &Tensor<T>, grad_y: &Tensor<T>, leak: T) -> Result<Tensor<T>> {
    x.zip_map(grad_y, |v, g| if v >= T::zero() { g } else { leak * g })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Inverted-dropout mask: 0 with probability `p`, else `1 / (1 - p)`.
/// `None` means the layer is the identity (eval mode or `p = 0`).
pub fn dropout_mask<T: Scalar>(
    dims: &[usize],
    p: f64,
    mode: Mode,
    rng: &mut impl RngCore,
) -> Result<Option<Tensor<T>>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
    }
    if mode == Mode::Eval || p == 0.0 {
        return Ok(None);
    }
    let keep = T::of(1.0 / (1.0 - p));
    let n: usize = dims.iter().product();
    let data = (0..n)
        .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
        .collect();
    Ok(Some(Tensor::new(dims.to_vec(), data)?))
}
