use std::collections::HashMap;

use super::graph::ContractionGraph;
use super::topology::{LegRef, Role, Topology};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{contract, Scalar, Tensor};

/// Largest dense matrix `to_dense` will build by default.
pub const DEFAULT_DENSE_CAP: usize = 1 << 26;

/// Sequence in which nodes are absorbed into the running state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContractionOrder(pub Vec<usize>);

impl ContractionOrder {
    /// Construction order: inputs, then each column's disentanglers and tree
    /// elements, left to right.
    pub fn columnwise(topo: &Topology) -> Self {
        Self((0..topo.nodes.len()).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Label {
    Input(usize),
    Out(LegRef),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Step {
    pub node: usize,
    /// State axes (batch excluded) paired with the node's in-legs, in leg order.
    pub state_axes: Vec<usize>,
    /// Entries of the state (per batch row) before this step.
    pub state_len: usize,
    /// Product of the node's in-leg and out-leg sizes.
    pub in_volume: usize,
    pub out_volume: usize,
    /// Last tree element of its column.
    pub ends_tree_column: bool,
}

/// Validated contraction schedule for applying a layer to a batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Plan {
    pub steps: Vec<Step>,
    pub input_dims: Vec<usize>,
    /// Moves the final state axes to `outputs ++ fixed` order.
    pub final_perm: Vec<usize>,
    pub in_width: usize,
    pub out_width: usize,
}

fn sources(topo: &Topology) -> HashMap<LegRef, Label> {
    let mut src = HashMap::new();
    for (k, &leg) in topo.inputs.iter().enumerate() {
        src.insert(leg, Label::Input(k));
    }
    for e in &topo.edges {
        src.insert(e.to, Label::Out(e.from));
    }
    src
}

fn check_order(topo: &Topology, order: &ContractionOrder) -> Result<()> {
    let n = topo.nodes.len();
    let mut seen = vec![false; n];
    for &i in &order.0 {
        if i >= n {
            return Err(Error::Order(format!("node {i} does not exist")));
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::Order(format!("node {i} appears twice")));
        }
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::Order(format!("node {missing} is never contracted")));
    }
    Ok(())
}

pub fn plan(topo: &Topology, order: &ContractionOrder) -> Result<Plan> {
    check_order(topo, order)?;
    let src = sources(topo);
    let mut labels: Vec<Label> = (0..topo.inputs.len()).map(Label::Input).collect();
    let mut dims: Vec<usize> = topo.inputs.iter().map(|&l| topo.leg_dim(l)).collect();
    let input_dims = dims.clone();
    let mut steps = Vec::with_capacity(order.0.len());
    for (pos, &i) in order.0.iter().enumerate() {
        let node = &topo.nodes[i];
        let p = node.in_dims.len();
        let mut state_axes = Vec::with_capacity(p);
        for leg in 0..p {
            let label = src[&LegRef::new(i, leg)];
            let axis = labels.iter().position(|&l| l == label).ok_or_else(|| {
                Error::Order(format!("node {i} is applied before the producer of its leg {leg}"))
            })?;
            state_axes.push(axis);
        }
        let state_len = dims.iter().product();
        let mut next_labels = Vec::new();
        let mut next_dims = Vec::new();
        for (k, (&l, &d)) in labels.iter().zip(&dims).enumerate() {
            if !state_axes.contains(&k) {
                next_labels.push(l);
                next_dims.push(d);
            }
        }
        for (o, &d) in node.out_dims.iter().enumerate() {
            next_labels.push(Label::Out(LegRef::new(i, p + o)));
            next_dims.push(d);
        }
        let ends_tree_column = node.role == Role::Tree
            && order.0.get(pos + 1).is_none_or(|&j| {
                let nj = &topo.nodes[j];
                nj.role != Role::Tree || nj.column != node.column
            });
        steps.push(Step {
            node: i,
            state_axes,
            state_len,
            in_volume: node.in_dims.iter().product(),
            out_volume: node.out_dims.iter().product(),
            ends_tree_column,
        });
        labels = next_labels;
        dims = next_dims;
    }
    let mut final_perm = Vec::with_capacity(labels.len());
    for leg in topo.outputs.iter().chain(topo.fixed.iter().map(|f| &f.leg)) {
        let axis = labels
            .iter()
            .position(|&l| l == Label::Out(*leg))
            .ok_or_else(|| Error::Order(format!("output {leg:?} never produced")))?;
        final_perm.push(axis);
    }
    if final_perm.len() != labels.len() {
        return Err(Error::Order("state keeps legs that are not outputs".into()));
    }
    Ok(Plan {
        steps,
        input_dims,
        final_perm,
        in_width: topo.in_width(),
        out_width: topo.out_width(),
    })
}

fn batch_rows<T: Scalar>(x: &Tensor<T>, width: usize) -> Result<usize> {
    if x.rank() != 2 || x.dims()[1] != width {
        return Err(Error::Shape(format!(
            "layer expects (batch, {width}) input, got {:?}",
            x.dims()
        )));
    }
    Ok(x.dims()[0])
}

fn with_batch(batch: usize, rest: &[usize]) -> Vec<usize> {
    std::iter::once(batch).chain(rest.iter().copied()).collect()
}

fn shifted(axes: &[usize]) -> Vec<usize> {
    axes.iter().map(|a| a + 1).collect()
}

/// Applies the layer to each row of `x` (batch x in_width), node by node in
/// columnwise order.
pub fn forward<T: Scalar>(g: &ContractionGraph<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let topo = g.topology();
    let p = plan(topo, &ContractionOrder::columnwise(topo))?;
    forward_with(g, &p, x)
}

/// As [`forward`] with a precomputed plan.
pub fn forward_with<T: Scalar>(g: &ContractionGraph<T>, plan: &Plan, x: &Tensor<T>) -> Result<Tensor<T>> {
    let batch = batch_rows(x, plan.in_width)?;
    let mut state = x.reshaped(&with_batch(batch, &plan.input_dims))?;
    for step in &plan.steps {
        let node = g.node(step.node);
        let node_axes: Vec<usize> = (0..step.state_axes.len()).collect();
        state = contract(&state, &shifted(&step.state_axes), node, &node_axes)?;
    }
    let perm = with_batch(0, &shifted(&plan.final_perm));
    state.permute(&perm)?.reshape(&[batch, plan.out_width])
}

/// Records the layer on `tape`. `nodes` are the tape handles of the node
/// tensors; `mid_leak` applies a leaky ReLU to the whole state after each
/// column of tree elements.
pub fn forward_tape<T: Scalar>(
    tape: &mut Tape<T>,
    plan: &Plan,
    x: Var,
    nodes: &[Var],
    mid_leak: Option<T>,
) -> Result<Var> {
    let batch = batch_rows(tape.value(x), plan.in_width)?;
    let mut state = tape.reshape(x, &with_batch(batch, &plan.input_dims))?;
    for step in &plan.steps {
        let node_axes: Vec<usize> = (0..step.state_axes.len()).collect();
        state = tape.contract(state, &shifted(&step.state_axes), nodes[step.node], &node_axes)?;
        if let (Some(leak), true) = (mid_leak, step.ends_tree_column) {
            state = tape.leaky_relu(state, leak);
        }
    }
    let perm = with_batch(0, &shifted(&plan.final_perm));
    let state = tape.permute(state, &perm)?;
    tape.reshape(state, &[batch, plan.out_width])
}

/// The `out_width x in_width` matrix of the layer, built by merging node
/// tensors one at a time. Fixed legs enter as their size-1 slices.
pub fn to_dense<T: Scalar>(g: &ContractionGraph<T>, cap: usize) -> Result<Tensor<T>> {
    let topo = g.topology();
    let needed = topo.out_width().saturating_mul(topo.in_width());
    if needed > cap {
        return Err(Error::CapExceeded { needed, cap });
    }
    let src = sources(topo);
    let mut acc: Option<(Tensor<T>, Vec<Label>)> = None;
    for (i, node) in topo.nodes.iter().enumerate() {
        let p = node.in_dims.len();
        let node_labels: Vec<Label> = (0..node.legs())
            .map(|leg| {
                if leg < p {
                    src[&LegRef::new(i, leg)]
                } else {
                    Label::Out(LegRef::new(i, leg))
                }
            })
            .collect();
        acc = Some(match acc.take() {
            None => (g.node(i).clone(), node_labels),
            Some((t, labels)) => {
                let mut a_axes = Vec::new();
                let mut b_axes = Vec::new();
                for (leg, l) in node_labels.iter().enumerate().take(p) {
                    if let Label::Out(_) = l {
                        let pos = labels.iter().position(|x| x == l).ok_or_else(|| {
                            Error::Order(format!("node {i} precedes the producer of its leg {leg}"))
                        })?;
                        a_axes.push(pos);
                        b_axes.push(leg);
                    }
                }
                let free: usize = t
                    .dims()
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| !a_axes.contains(k))
                    .map(|(_, d)| d)
                    .chain(node.dims().iter().enumerate().filter(|(k, _)| !b_axes.contains(k)).map(|(_, d)| d))
                    .product::<usize>();
                if free > cap {
                    return Err(Error::CapExceeded { needed: free, cap });
                }
                let merged = contract(&t, &a_axes, g.node(i), &b_axes)?;
                let mut next: Vec<Label> = labels
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| !a_axes.contains(k))
                    .map(|(_, &l)| l)
                    .collect();
                next.extend(
                    node_labels
                        .iter()
                        .enumerate()
                        .filter(|(k, _)| !b_axes.contains(k))
                        .map(|(_, &l)| l),
                );
                (merged, next)
            }
        });
    }
    let (t, labels) = acc.ok_or_else(|| Error::Spec("layer has no nodes".into()))?;
    let wanted = topo
        .outputs
        .iter()
        .chain(topo.fixed.iter().map(|f| &f.leg))
        .map(|&l| Label::Out(l))
        .chain((0..topo.inputs.len()).map(Label::Input));
    let perm = wanted
        .map(|w| {
            labels
                .iter()
                .position(|&l| l == w)
                .ok_or_else(|| Error::Spec(format!("open leg {w:?} missing from the network")))
        })
        .collect::<Result<Vec<_>>>()?;
    t.permute(&perm)?.reshape(&[topo.out_width(), topo.in_width()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::Rng;
    use crate::layers::{LayerKind, LayerSpec};

    fn random_graph(kind: LayerKind, n: usize, d: usize, bond: usize, seed: u64) -> ContractionGraph<f64> {
        let mut g = ContractionGraph::build(&LayerSpec::new(kind, n, d, bond)).unwrap();
        g.init_gaussian(&Rng::new(seed), 0).unwrap();
        g
    }

    #[test]
    fn zero_input_gives_zero() {
        let g = random_graph(LayerKind::Mera, 4, 2, 2, 1);
        let y = forward(&g, &Tensor::zeros(&[3, 16])).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identical_rows_identical_outputs() {
        let g = random_graph(LayerKind::Mera, 6, 2, 2, 2).cast::<f32>();
        let row: Vec<f32> = (0..64).map(|k| (k as f32 * 0.37).sin()).collect();
        let x = Tensor::new(vec![2, 64], [row.clone(), row].concat()).unwrap();
        let y = forward(&g, &x).unwrap();
        assert_eq!(y.data()[..64], y.data()[64..]);
    }

    #[test]
    fn dense_wrapper_round_trips() {
        let w = Tensor::<f64>::from_fn(&[8, 4], |i| (i[0] * 4 + i[1]) as f64);
        let g = ContractionGraph::from_dense(&w, 2).unwrap();
        assert_eq!(to_dense(&g, DEFAULT_DENSE_CAP).unwrap(), w);
        let x = Tensor::from_fn(&[1, 4], |i| i[1] as f64 + 1.0);
        assert_eq!(forward(&g, &x).unwrap(), x.matmul(&w.t().unwrap()).unwrap());
    }

    #[test]
    fn cap_is_enforced() {
        let g = random_graph(LayerKind::Tt, 8, 2, 2, 0);
        assert!(matches!(to_dense(&g, 1000), Err(Error::CapExceeded { .. })));
    }

    #[test]
    fn bad_orders_rejected() {
        let t = LayerSpec::new(LayerKind::Tt, 4, 2, 2).topology().unwrap();
        assert!(plan(&t, &ContractionOrder(vec![1, 0, 2, 3])).is_err());
        assert!(plan(&t, &ContractionOrder(vec![0, 1, 2])).is_err());
        assert!(plan(&t, &ContractionOrder(vec![0, 1, 1, 3])).is_err());
        assert!(plan(&t, &ContractionOrder(vec![0, 1, 2, 3])).is_ok());
    }

    #[test]
    fn width_mismatch_rejected() {
        let g = random_graph(LayerKind::Tree, 4, 2, 2, 0);
        assert!(forward(&g, &Tensor::zeros(&[1, 8])).is_err());
    }

    #[test]
    fn tape_forward_matches_plain_forward() {
        let g = random_graph(LayerKind::Mera, 8, 2, 2, 5);
        let x = Tensor::from_fn(&[3, 256], |i| ((i[0] * 256 + i[1]) as f64 * 0.1).cos());
        let p = plan(g.topology(), &ContractionOrder::columnwise(g.topology())).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let nodes: Vec<Var> = g.tensors().iter().enumerate().map(|(i, t)| tape.param(i, t.clone())).collect();
        let y = forward_tape(&mut tape, &p, xv, &nodes, None).unwrap();
        assert_eq!(tape.value(y), &forward(&g, &x).unwrap());
        assert_eq!(tape.trainable_scalars(), g.topology().param_count());
    }
}
