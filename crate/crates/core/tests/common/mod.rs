#![allow(dead_code)]

use rand::{Rng as _, RngCore};
use tnlayers::layers::{ContractionGraph, LegRef, Topology};
use tnlayers::Tensor;

pub fn uniform(dims: &[usize], lo: f64, hi: f64, rng: &mut impl RngCore) -> Tensor<f64> {
    Tensor::from_fn(dims, |_| rng.random_range(lo..hi))
}

/// Max abs difference relative to the larger max-abs of the two.
pub fn rel_err(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let scale = a.max_abs().max(b.max_abs()).max(1e-300);
    a.max_abs_diff(b) / scale
}

fn digits(mut flat: usize, dims: &[usize]) -> Vec<usize> {
    let mut out = vec![0; dims.len()];
    for k in (0..dims.len()).rev() {
        out[k] = flat % dims[k];
        flat /= dims[k];
    }
    out
}

/// Dense matrix of a layer by summing the product of all node entries over
/// every assignment of every bond index. Independent of the library's
/// contraction code; only usable for tiny graphs.
pub fn brute_force_dense(g: &ContractionGraph<f64>) -> Tensor<f64> {
    let topo: &Topology = g.topology();
    let in_dims: Vec<usize> = topo.inputs.iter().map(|&l| topo.leg_dim(l)).collect();
    let out_dims: Vec<usize> = topo.outputs.iter().map(|&l| topo.leg_dim(l)).collect();
    let bond_dims: Vec<usize> = topo.edges.iter().map(|e| topo.leg_dim(e.from)).collect();
    let rows: usize = out_dims.iter().product();
    let cols: usize = in_dims.iter().product();
    let bonds: usize = bond_dims.iter().product();

    // where each leg's index comes from
    enum Src {
        In(usize),
        Out(usize),
        Bond(usize),
        Zero,
    }
    let find = |leg: LegRef| -> Src {
        if let Some(k) = topo.inputs.iter().position(|&l| l == leg) {
            return Src::In(k);
        }
        if let Some(k) = topo.outputs.iter().position(|&l| l == leg) {
            return Src::Out(k);
        }
        if let Some(k) = topo.edges.iter().position(|e| e.from == leg || e.to == leg) {
            return Src::Bond(k);
        }
        Src::Zero
    };
    let legs: Vec<Vec<Src>> = topo
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (0..n.legs()).map(|l| find(LegRef { node: i, leg: l })).collect())
        .collect();

    Tensor::from_fn(&[rows, cols], |rc| {
        let o = digits(rc[0], &out_dims);
        let x = digits(rc[1], &in_dims);
        let mut total = 0.0;
        for b in 0..bonds {
            let bd = digits(b, &bond_dims);
            let mut prod = 1.0;
            for (i, srcs) in legs.iter().enumerate() {
                let idx: Vec<usize> = srcs
                    .iter()
                    .map(|s| match s {
                        Src::In(k) => x[*k],
                        Src::Out(k) => o[*k],
                        Src::Bond(k) => bd[*k],
                        Src::Zero => 0,
                    })
                    .collect();
                prod *= g.node(i).get(&idx);
            }
            total += prod;
        }
        total
    })
}
