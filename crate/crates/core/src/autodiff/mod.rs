//! Tape-based reverse-mode differentiation.
//!
//! Every recorded op keeps what its backward needs. The adjoint of `contract`
//! is again a `contract` followed by a `permute`.

mod gradcheck;

use std::collections::BTreeMap;

pub use gradcheck::{gradcheck, GradcheckReport};

use crate::error::{Error, Result};
use crate::nn::{
    batchnorm_eval, batchnorm_eval_backward, batchnorm_train, batchnorm_train_backward,
    conv2d_backward, conv2d_forward, lrelu, lrelu_backward, maxpool_backward, maxpool_forward,
    softmax_xent, softmax_xent_backward, BnCache,
};
use crate::tensor::{contract, invert_permutation, Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-channel `(mean, biased variance)` of one batch.
pub type MomentPair<T> = (Vec<T>, Vec<T>);

/// Batch statistics source for a batch-norm op.
#[derive(Clone, Debug, PartialEq)]
pub enum BnStats<T> {
    /// Normalize with the batch's own statistics.
    Batch,
    /// Normalize with fixed running statistics.
    Running { mean: Vec<T>, var: Vec<T> },
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf { param: Option<usize>, trainable: bool },
    Contract { a: Var, a_axes: Vec<usize>, b: Var, b_axes: Vec<usize> },
    Permute { x: Var, perm: Vec<usize> },
    Reshape { x: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, factor: T },
    Sum { x: Var },
    LeakyRelu { x: Var, leak: T },
    Dropout { x: Var, mask: Tensor<T> },
    Conv2d { x: Var, k: Var },
    MaxPool { x: Var, window: usize, stride: usize, argmax: Vec<usize> },
    BatchNorm { x: Var, gamma: Var, beta: Var, stats: BnStats<T>, cache: Option<BnCache<T>> },
    SoftmaxXent { logits: Var, labels: Vec<usize>, probs: Tensor<T> },
}

#[derive(Clone, Debug)]
struct Entry<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Deliberately wrong adjoints, for exercising the failure path of the
/// verification suites.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdjointFault {
    /// Doubles the gradient flowing into the left operand of every contract.
    ContractLhsTwice,
}

/// Gradients keyed by parameter id. Frozen parameters have no entry.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradientSet<T> {
    grads: BTreeMap<usize, Tensor<T>>,
}

impl<T: Scalar> GradientSet<T> {
    pub fn get(&self, param: usize) -> Option<&Tensor<T>> {
        self.grads.get(&param)
    }

    pub fn contains(&self, param: usize) -> bool {
        self.grads.contains_key(&param)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &Tensor<T>)> {
        self.grads.iter().map(|(&k, v)| (k, v))
    }

    /// Total number of gradient scalars.
    pub fn scalar_count(&self) -> usize {
        self.grads.values().map(Tensor::len).sum()
    }
}

#[derive(Clone, Debug, Default)]
pub struct Tape<T> {
    entries: Vec<Entry<T>>,
    fault: Option<AdjointFault>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            fault: None,
        }
    }

    #[doc(hidden)]
    pub fn inject_fault(&mut self, fault: AdjointFault) {
        self.fault = Some(fault);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.entries[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = match &op {
            Op::Leaf { trainable, .. } => *trainable,
            _ => inputs.iter().any(|v| self.entries[v.0].needs_grad),
        };
        self.entries.push(Entry {
            value,
            op,
            needs_grad,
        });
        Var(self.entries.len() - 1)
    }

    /// Trainable parameter with the caller's id.
    pub fn param(&mut self, id: usize, value: Tensor<T>) -> Var {
        self.push(
            value,
            Op::Leaf {
                param: Some(id),
                trainable: true,
            },
            &[],
        )
    }

    /// Parameter excluded from differentiation.
    pub fn frozen(&mut self, id: usize, value: Tensor<T>) -> Var {
        self.push(
            value,
            Op::Leaf {
                param: Some(id),
                trainable: false,
            },
            &[],
        )
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(
            value,
            Op::Leaf {
                param: None,
                trainable: false,
            },
            &[],
        )
    }

    pub fn contract(&mut self, a: Var, a_axes: &[usize], b: Var, b_axes: &[usize]) -> Result<Var> {
        let value = contract(self.value(a), a_axes, self.value(b), b_axes)?;
        let op = Op::Contract {
            a,
            a_axes: a_axes.to_vec(),
            b,
            b_axes: b_axes.to_vec(),
        };
        Ok(self.push(value, op, &[a, b]))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let value = self.value(x).permute(perm)?;
        Ok(self.push(value, Op::Permute { x, perm: perm.to_vec() }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, dims: &[usize]) -> Result<Var> {
        let value = self.value(x).reshaped(dims)?;
        Ok(self.push(value, Op::Reshape { x }, &[x]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add { a, b }, &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(value, Op::Mul { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let value = self.value(x).scale(factor);
        self.push(value, Op::Scale { x, factor }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum { x }, &[x])
    }

    pub fn leaky_relu(&mut self, x: Var, leak: T) -> Var {
        let value = lrelu(self.value(x), leak);
        self.push(value, Op::LeakyRelu { x, leak }, &[x])
    }

    /// Multiplies by a precomputed inverted-dropout mask.
    pub fn dropout(&mut self, x: Var, mask: Tensor<T>) -> Result<Var> {
        let value = self.value(x).zip_map(&mask, |a, m| a * m)?;
        Ok(self.push(value, Op::Dropout { x, mask }, &[x]))
    }

    pub fn conv2d(&mut self, x: Var, k: Var) -> Result<Var> {
        let value = conv2d_forward(self.value(x), self.value(k))?;
        Ok(self.push(value, Op::Conv2d { x, k }, &[x, k]))
    }

    pub fn max_pool(&mut self, x: Var, window: usize, stride: usize) -> Result<Var> {
        let (value, argmax) = maxpool_forward(self.value(x), window, stride)?;
        let op = Op::MaxPool {
            x,
            window,
            stride,
            argmax,
        };
        Ok(self.push(value, op, &[x]))
    }

    /// Batch normalization. With [`BnStats::Batch`] the batch mean and
    /// variance are returned for running-average bookkeeping.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: BnStats<T>,
    ) -> Result<(Var, Option<MomentPair<T>>)> {
        let (value, cache) = match &stats {
            BnStats::Batch => {
                let (y, c) = batchnorm_train(self.value(x), self.value(gamma), self.value(beta))?;
                (y, Some(c))
            }
            BnStats::Running { mean, var } => (
                batchnorm_eval(self.value(x), self.value(gamma), self.value(beta), mean, var)?,
                None,
            ),
        };
        let moments = cache.as_ref().map(|c| (c.mean.clone(), c.var.clone()));
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            stats,
            cache,
        };
        Ok((self.push(value, op, &[x, gamma, beta]), moments))
    }

    /// Mean cross-entropy of the rows of `logits` against `labels`.
    pub fn softmax_xent(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (loss, probs) = softmax_xent(self.value(logits), labels)?;
        let op = Op::SoftmaxXent {
            logits,
            labels: labels.to_vec(),
            probs,
        };
        Ok(self.push(Tensor::scalar(loss), op, &[logits]))
    }

    /// Smallest `|x|` fed to any leaky ReLU on the tape.
    pub fn min_kink_distance(&self) -> Option<T> {
        self.entries
            .iter()
            .filter_map(|e| match e.op {
                Op::LeakyRelu { x, .. } => Some(self.value(x).data().iter().map(|v| v.abs()).fold(T::infinity(), T::min)),
                _ => None,
            })
            .reduce(T::min)
    }

    /// Ids of trainable parameters, in recording order.
    pub fn trainable_params(&self) -> Vec<usize> {
        self.entries
            .iter()
            .filter_map(|e| match e.op {
                Op::Leaf {
                    param: Some(id),
                    trainable: true,
                } => Some(id),
                _ => None,
            })
            .collect()
    }

    /// Number of trainable scalars on the tape.
    pub fn trainable_scalars(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| matches!(e.op, Op::Leaf { param: Some(_), trainable: true }))
            .map(|e| e.value.len())
            .sum()
    }

    /// Recomputes every recorded value from the leaves.
    pub fn replay(&self) -> Result<Vec<Tensor<T>>> {
        let mut vals: Vec<Tensor<T>> = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            let v = |x: &Var| &vals[x.0];
            let out = match &e.op {
                Op::Leaf { .. } => e.value.clone(),
                Op::Contract { a, a_axes, b, b_axes } => contract(v(a), a_axes, v(b), b_axes)?,
                Op::Permute { x, perm } => v(x).permute(perm)?,
                Op::Reshape { x } => v(x).reshaped(e.value.dims())?,
                Op::Add { a, b } => v(a).add(v(b))?,
                Op::Mul { a, b } => v(a).zip_map(v(b), |p, q| p * q)?,
                Op::Scale { x, factor } => v(x).scale(*factor),
                Op::Sum { x } => Tensor::scalar(v(x).sum()),
                Op::LeakyRelu { x, leak } => lrelu(v(x), *leak),
                Op::Dropout { x, mask } => v(x).zip_map(mask, |a, m| a * m)?,
                Op::Conv2d { x, k } => conv2d_forward(v(x), v(k))?,
                Op::MaxPool { x, window, stride, .. } => maxpool_forward(v(x), *window, *stride)?.0,
                Op::BatchNorm {
                    x, gamma, beta, stats, ..
                } => match stats {
                    BnStats::Batch => batchnorm_train(v(x), v(gamma), v(beta))?.0,
                    BnStats::Running { mean, var } => batchnorm_eval(v(x), v(gamma), v(beta), mean, var)?,
                },
                Op::SoftmaxXent { logits, labels, .. } => Tensor::scalar(softmax_xent(v(logits), labels)?.0),
            };
            vals.push(out);
        }
        Ok(vals)
    }

    /// True when [`Self::replay`] reproduces every recorded value bit for bit.
    pub fn replay_matches(&self) -> Result<bool> {
        let vals = self.replay()?;
        Ok(vals.iter().zip(&self.entries).all(|(a, e)| {
            a.dims() == e.value.dims()
                && a.data().iter().zip(e.value.data()).all(|(x, y)| x.bits() == y.bits())
        }))
    }

    /// Reverse sweep from a scalar `root`, seeded with `seed`.
    pub fn backward(&self, root: Var, seed: T) -> Result<GradientSet<T>> {
        let root_val = self.value(root);
        if root_val.len() != 1 {
            return Err(Error::NonScalarRoot(root_val.dims().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::full(root_val.dims(), seed));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let entry = &self.entries[i];
            if !entry.needs_grad {
                continue;
            }
            if let Op::Leaf { .. } = entry.op {
                grads[i] = Some(g);
                continue;
            }
            for (input, gi) in self.adjoint(entry, &g)? {
                if !self.entries[input.0].needs_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&gi)?,
                    slot => *slot = Some(gi),
                }
            }
        }
        let mut out = GradientSet::default();
        for (i, e) in self.entries.iter().enumerate() {
            if let Op::Leaf {
                param: Some(id),
                trainable: true,
            } = e.op
            {
                let g = grads
                    .get_mut(i)
                    .and_then(Option::take)
                    .unwrap_or_else(|| Tensor::zeros(e.value.dims()));
                match out.grads.get_mut(&id) {
                    Some(acc) => acc.add_assign(&g)?,
                    None => {
                        out.grads.insert(id, g);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Input gradients of one entry given its upstream gradient `g`.
    fn adjoint(&self, entry: &Entry<T>, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let needs = |v: &Var| self.entries[v.0].needs_grad;
        Ok(match &entry.op {
            Op::Leaf { .. } => Vec::new(),
            Op::Contract { a, a_axes, b, b_axes } => {
                let mut out = Vec::new();
                let (av, bv) = (self.value(*a), self.value(*b));
                if needs(a) {
                    let mut ga = contract_adjoint_lhs(g, av, bv, a_axes, b_axes)?;
                    if self.fault == Some(AdjointFault::ContractLhsTwice) {
                        ga = ga.scale(T::of(2.0));
                    }
                    out.push((*a, ga));
                }
                if needs(b) {
                    out.push((*b, contract_adjoint_rhs(g, av, bv, a_axes, b_axes)?));
                }
                out
            }
            Op::Permute { x, perm } => vec![(*x, g.permute(&invert_permutation(perm))?)],
            Op::Reshape { x } => vec![(*x, g.reshaped(self.value(*x).dims())?)],
            Op::Add { a, b } => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Mul { a, b } => vec![
                (*a, g.zip_map(self.value(*b), |p, q| p * q)?),
                (*b, g.zip_map(self.value(*a), |p, q| p * q)?),
            ],
            Op::Scale { x, factor } => vec![(*x, g.scale(*factor))],
            Op::Sum { x } => vec![(*x, Tensor::full(self.value(*x).dims(), g.data()[0]))],
            Op::LeakyRelu { x, leak } => vec![(*x, lrelu_backward(self.value(*x), g, *leak)?)],
            Op::Dropout { x, mask } => vec![(*x, g.zip_map(mask, |p, m| p * m)?)],
            Op::Conv2d { x, k } => {
                let (gx, gk) = conv2d_backward(self.value(*x), self.value(*k), g, needs(x))?;
                let mut out = vec![(*k, gk)];
                if let Some(gx) = gx {
                    out.push((*x, gx));
                }
                out
            }
            Op::MaxPool { x, argmax, .. } => {
                vec![(*x, maxpool_backward(g, argmax, self.value(*x).dims())?)]
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                stats,
                cache,
            } => {
                let gm = self.value(*gamma);
                let (gx, gg, gb) = match (stats, cache) {
                    (BnStats::Batch, Some(c)) => batchnorm_train_backward(g, c, gm)?,
                    (BnStats::Running { mean, var }, _) => {
                        batchnorm_eval_backward(self.value(*x), g, gm, mean, var)?
                    }
                    (BnStats::Batch, None) => unreachable!("train-mode batch norm always caches"),
                };
                vec![(*x, gx), (*gamma, gg), (*beta, gb)]
            }
            Op::SoftmaxXent { logits, labels, probs } => {
                vec![(*logits, softmax_xent_backward(probs, labels, g.data()[0]))]
            }
        })
    }
}

fn sorted(axes: &[usize]) -> Vec<usize> {
    let mut s = axes.to_vec();
    s.sort_unstable();
    s
}

fn free_axes(rank: usize, paired: &[usize]) -> Vec<usize> {
    (0..rank).filter(|k| !paired.contains(k)).collect()
}

/// `dA = contract(dC, b-free part, B, b-free axes)`, permuted back to A's axes.
fn contract_adjoint_lhs<T: Scalar>(
    g: &Tensor<T>,
    a: &Tensor<T>,
    b: &Tensor<T>,
    a_axes: &[usize],
    b_axes: &[usize],
) -> Result<Tensor<T>> {
    let a_free = free_axes(a.rank(), a_axes);
    let b_free = free_axes(b.rank(), b_axes);
    let g_b_part: Vec<usize> = (a_free.len()..a_free.len() + b_free.len()).collect();
    // axes: a_free.., then b's paired axes in ascending order
    let raw = contract(g, &g_b_part, b, &b_free)?;
    let b_sorted = sorted(b_axes);
    let mut perm = vec![0; a.rank()];
    for (x, slot) in perm.iter_mut().enumerate() {
        *slot = match a_free.iter().position(|&f| f == x) {
            Some(p) => p,
            None => {
                let k = a_axes.iter().position(|&ax| ax == x).expect("paired axis");
                a_free.len() + b_sorted.iter().position(|&bx| bx == b_axes[k]).expect("sorted")
            }
        };
    }
    raw.permute(&perm)
}

/// `dB = contract(A, a-free axes, dC, a-free part)`, permuted back to B's axes.
fn contract_adjoint_rhs<T: Scalar>(
    g: &Tensor<T>,
    a: &Tensor<T>,
    b: &Tensor<T>,
    a_axes: &[usize],
    b_axes: &[usize],
) -> Result<Tensor<T>> {
    let a_free = free_axes(a.rank(), a_axes);
    let b_free = free_axes(b.rank(), b_axes);
    let g_a_part: Vec<usize> = (0..a_free.len()).collect();
    // axes: a's paired axes in ascending order, then b_free..
    let raw = contract(a, &a_free, g, &g_a_part)?;
    let a_sorted = sorted(a_axes);
    let mut perm = vec![0; b.rank()];
    for (y, slot) in perm.iter_mut().enumerate() {
        *slot = match b_free.iter().position(|&f| f == y) {
            Some(p) => a_axes.len() + p,
            None => {
                let k = b_axes.iter().position(|&bx| bx == y).expect("paired axis");
                a_sorted.iter().position(|&ax| ax == a_axes[k]).expect("sorted")
            }
        };
    }
    raw.permute(&perm)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_layer_gradient_is_outer_product() {
        let mut tape = Tape::<f64>::new();
        let w = tape.param(0, Tensor::from_fn(&[3, 4], |i| (i[0] * 4 + i[1]) as f64 * 0.1));
        let x = tape.constant(Tensor::new(vec![4], vec![1.0, -2.0, 0.5, 3.0]).unwrap());
        let y = tape.contract(w, &[1], x, &[0]).unwrap();
        let loss = tape.sum(y);
        let g = tape.backward(loss, 1.0).unwrap();
        let gw = g.get(0).unwrap();
        for i in 0..3 {
            for j in 0..4 {
                assert_eq!(gw.get(&[i, j]), tape.value(x).data()[j]);
            }
        }
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut tape = Tape::<f64>::new();
        let w = tape.param(0, Tensor::ones(&[2, 2]));
        assert!(matches!(tape.backward(w, 1.0), Err(Error::NonScalarRoot(_))));
    }

    #[test]
    fn frozen_leaf_has_no_entry() {
        let build = |freeze: bool| {
            let mut tape = Tape::<f64>::new();
            let a = tape.param(0, Tensor::from_fn(&[2, 3], |i| (i[0] + 2 * i[1]) as f64 - 1.5));
            let bt = Tensor::from_fn(&[3, 2], |i| (3 * i[0] + i[1]) as f64 * 0.25);
            let b = if freeze { tape.frozen(1, bt) } else { tape.param(1, bt) };
            let c = tape.contract(a, &[1], b, &[0]).unwrap();
            let sq = tape.mul(c, c).unwrap();
            let loss = tape.sum(sq);
            tape.backward(loss, 1.0).unwrap()
        };
        let all = build(false);
        let some = build(true);
        assert!(!some.contains(1));
        assert_eq!(some.get(0), all.get(0));
    }

    #[test]
    fn replay_is_bit_exact_and_backward_deterministic() {
        let mut tape = Tape::<f32>::new();
        let a = tape.param(0, Tensor::from_fn(&[2, 3, 2], |i| (i[0] + i[1] * 2 + i[2]) as f32 * 0.3 - 0.7));
        let b = tape.param(1, Tensor::from_fn(&[2, 2], |i| (i[0] * 2 + i[1]) as f32 - 1.2));
        let c = tape.contract(a, &[2, 0], b, &[0, 1]).unwrap();
        let r = tape.leaky_relu(c, 0.2);
        let l = tape.sum(r);
        assert!(tape.replay_matches().unwrap());
        assert_eq!(tape.backward(l, 1.0).unwrap(), tape.backward(l, 1.0).unwrap());
    }

    #[test]
    fn injected_fault_changes_gradient() {
        let mut tape = Tape::<f64>::new();
        let a = tape.param(0, Tensor::ones(&[2]));
        let b = tape.constant(Tensor::ones(&[2]));
        let c = tape.contract(a, &[0], b, &[0]).unwrap();
        let good = tape.backward(c, 1.0).unwrap();
        tape.inject_fault(AdjointFault::ContractLhsTwice);
        let bad = tape.backward(c, 1.0).unwrap();
        assert_eq!(bad.get(0).unwrap().data(), &[2.0, 2.0]);
        assert_eq!(good.get(0).unwrap().data(), &[1.0, 1.0]);
    }
}
