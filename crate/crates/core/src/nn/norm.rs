//! Batch normalization over every axis but the last (channels).

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const EPS: f64 = 1e-5;
pub const MOMENTUM: f64 = 0.9;

/// Saved state of a train-mode pass.
#[derive(Clone, Debug, PartialEq)]
pub struct BnCache<T> {
    pub xhat: Tensor<T>,
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub inv_std: Vec<T>,
}

fn channels<T: Scalar>(x: &Tensor<T>) -> Result<(usize, usize)> {
    let c = *x
        .dims()
        .last()
        .ok_or_else(|| Error::Shape("batch norm of a scalar".into()))?;
    Ok((x.len() / c, c))
}

fn check_affine<T: Scalar>(c: usize, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<()> {
    if gamma.dims() != [c] || beta.dims() != [c] {
        return Err(Error::Shape(format!(
            "batch norm over {c} channels got gamma {:?}, beta {:?}",
            gamma.dims(),
            beta.dims()
        )));
    }
    Ok(())
}

pub fn batchnorm_train<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
) -> Result<(Tensor<T>, BnCache<T>)> {
    let (rows, c) = channels(x)?;
    check_affine(c, gamma, beta)?;
    if x.dims()[0] < 2 {
        return Err(Error::BatchTooSmall(x.dims()[0]));
    }
    let nf = T::of(rows as f64);
    let mut mean = vec![T::zero(); c];
    for row in x.data().chunks_exact(c) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= nf);
    let mut var = vec![T::zero(); c];
    for row in x.data().chunks_exact(c) {
        for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|s| *s /= nf);
    let eps = T::of(EPS);
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = Vec::with_capacity(x.len());
    let mut y = Vec::with_capacity(x.len());
    for row in x.data().chunks_exact(c) {
        for k in 0..c {
            let h = (row[k] - mean[k]) * inv_std[k];
            xhat.push(h);
            y.push(gamma.data()[k] * h + beta.data()[k]);
        }
    }
    let dims = x.dims().to_vec();
    Ok((
        Tensor::new(dims.clone(), y)?,
        BnCache {
            xhat: Tensor::new(dims, xhat)?,
            mean,
            var,
            inv_std,
        },
    ))
}

pub fn batchnorm_eval<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &[T],
    running_var: &[T],
) -> Result<Tensor<T>> {
    let (_, c) = channels(x)?;
    check_affine(c, gamma, beta)?;
    if running_mean.len() != c || running_var.len() != c {
        return Err(Error::Shape("running statistics do not match channels".into()));
    }
    let eps = T::of(EPS);
    let scale: Vec<T> = (0..c)
        .map(|k| gamma.data()[k] / (running_var[k] + eps).sqrt())
        .collect();
    let mut y = Vec::with_capacity(x.len());
    for row in x.data().chunks_exact(c) {
        for k in 0..c {
            y.push((row[k] - running_mean[k]) * scale[k] + beta.data()[k]);
        }
    }
    Tensor::new(x.dims().to_vec(), y)
}

/// `running <- momentum * running + (1 - momentum) * batch`.
pub fn update_running<T: Scalar>(running: &mut [T], batch: &[T]) {
    let m = T::of(MOMENTUM);
    for (r, &b) in running.iter_mut().zip(batch) {
        *r = m * *r + (T::one() - m) * b;
    }
}

/// Gradients of a train-mode pass: `(grad_x, grad_gamma, grad_beta)`.
pub fn batchnorm_train_backward<T: Scalar>(
    grad_y: &Tensor<T>,
    cache: &BnCache<T>,
    gamma: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (rows, c) = channels(grad_y)?;
    let mut sum_g = vec![T::zero(); c];
    let mut sum_gh = vec![T::zero(); c];
    for (g, h) in grad_y.data().chunks_exact(c).zip(cache.xhat.data().chunks_exact(c)) {
        for k in 0..c {
            sum_g[k] += g[k];
            sum_gh[k] += g[k] * h[k];
        }
    }
    let nf = T::of(rows as f64);
    let mut gx = Vec::with_capacity(grad_y.len());
    for (g, h) in grad_y.data().chunks_exact(c).zip(cache.xhat.data().chunks_exact(c)) {
        for k in 0..c {
            let coef = gamma.data()[k] * cache.inv_std[k] / nf;
            gx.push(coef * (nf * g[k] - sum_g[k] - h[k] * sum_gh[k]));
        }
    }
    Ok((
        Tensor::new(grad_y.dims().to_vec(), gx)?,
        Tensor::new(vec![c], sum_gh)?,
        Tensor::new(vec![c], sum_g)?,
    ))
}

/// Gradients of an eval-mode pass, where the statistics are constants.
pub fn batchnorm_eval_backward<T: Scalar>(
    x: &Tensor<T>,
    grad_y: &Tensor<T>,
    gamma: &Tensor<T>,
    running_mean: &[T],
    running_var: &[T],
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (_, c) = channels(x)?;
    let eps = T::of(EPS);
    let inv: Vec<T> = running_var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut gx = Vec::with_capacity(x.len());
    let mut gg = vec![T::zero(); c];
    let mut gb = vec![T::zero(); c];
    for (row, g) in x.data().chunks_exact(c).zip(grad_y.data().chunks_exact(c)) {
        for k in 0..c {
            gx.push(g[k] * gamma.data()[k] * inv[k]);
            gg[k] += g[k] * (row[k] - running_mean[k]) * inv[k];
            gb[k] += g[k];
        }
    }
    Ok((
        Tensor::new(x.dims().to_vec(), gx)?,
        Tensor::new(vec![c], gg)?,
        Tensor::new(vec![c], gb)?,
    ))
}
