use rand::RngCore;

use super::topology::{LegRef, Role, Topology};
use super::{LayerKind, LayerSpec};
use crate::error::{Error, Result};
use crate::init::{init_gaussian_fanin, init_orthogonal_node, Rng};
use crate::tensor::{tensorize, AxisMap, Scalar, Tensor};

/// A factorized layer: topology plus one tensor per node, in construction
/// (column) order.
#[derive(Clone, Debug, PartialEq)]
pub struct ContractionGraph<T> {
    topo: Topology,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ContractionGraph<T> {
    pub fn zeros(topo: Topology) -> Self {
        let tensors = topo.nodes.iter().map(|n| Tensor::zeros(&n.dims())).collect();
        Self { topo, tensors }
    }

    pub fn build(spec: &LayerSpec) -> Result<Self> {
        Ok(Self::zeros(spec.topology()?))
    }

    pub fn from_tensors(topo: Topology, tensors: Vec<Tensor<T>>) -> Result<Self> {
        if tensors.len() != topo.nodes.len() {
            return Err(Error::Spec(format!(
                "{} tensors for {} nodes",
                tensors.len(),
                topo.nodes.len()
            )));
        }
        for (i, (t, n)) in tensors.iter().zip(&topo.nodes).enumerate() {
            if t.dims() != n.dims().as_slice() {
                return Err(Error::Shape(format!(
                    "node {i} expects {:?}, got {:?}",
                    n.dims(),
                    t.dims()
                )));
            }
        }
        Ok(Self { topo, tensors })
    }

    /// Wraps `w` (rows = outputs, cols = inputs) as a one-node dense layer.
    pub fn from_dense(w: &Tensor<T>, mode_dim: usize) -> Result<Self> {
        if w.rank() != 2 {
            return Err(Error::Shape("dense layer needs a matrix".into()));
        }
        let modes = |len: usize| -> Result<usize> {
            let mut m = 0;
            let mut x = 1;
            while x < len {
                x *= mode_dim;
                m += 1;
            }
            if x != len || m == 0 {
                return Err(Error::NotPowerOf { len, base: mode_dim });
            }
            Ok(m)
        };
        let out_modes = modes(w.dims()[0])?;
        let in_modes = modes(w.dims()[1])?;
        let mut spec = LayerSpec::new(LayerKind::Dense, in_modes, mode_dim, 1);
        spec.out_modes = out_modes;
        let node = tensorize(&w.t()?, AxisMap::new(in_modes, out_modes, mode_dim))?;
        Self::from_tensors(spec.topology()?, vec![node])
    }

    /// Orthogonal initialization of every node, one rng stream per node
    /// starting at `first_stream`.
    pub fn init_orthogonal(&mut self, rng: &Rng, first_stream: u64) -> Result<()> {
        self.init_orthogonal_with(rng, first_stream, false)
    }

    /// As [`Self::init_orthogonal`], optionally starting disentanglers at the
    /// identity.
    pub fn init_orthogonal_with(
        &mut self,
        rng: &Rng,
        first_stream: u64,
        identity_disentanglers: bool,
    ) -> Result<()> {
        for (i, node) in self.topo.nodes.iter().enumerate() {
            let t = if identity_disentanglers && node.role == Role::Disentangler {
                identity_node(&node.in_dims)
            } else {
                let mut stream = rng.stream(first_stream + i as u64);
                self.init_node(i, &mut stream)?
            };
            self.tensors[i] = t;
        }
        Ok(())
    }

    // Fixed legs have size 1 in the node; draw at full size and slice.
    fn init_node(&self, i: usize, rng: &mut impl RngCore) -> Result<Tensor<T>> {
        let node = &self.topo.nodes[i];
        let mut out_dims = node.out_dims.clone();
        let fixed: Vec<_> = self.topo.fixed.iter().filter(|f| f.leg.node == i).collect();
        for f in &fixed {
            out_dims[f.leg.leg - node.in_dims.len()] = f.original_dim;
        }
        let mut t = init_orthogonal_node(&node.in_dims, &out_dims, rng)?;
        for f in fixed {
            t = t.select(f.leg.leg, f.value)?;
        }
        Ok(t)
    }

    /// Gaussian initialization with `sigma = 1/sqrt(p)`, `p` the product of a
    /// node's in-leg sizes.
    pub fn init_gaussian(&mut self, rng: &Rng, first_stream: u64) -> Result<()> {
        for (i, node) in self.topo.nodes.iter().enumerate() {
            let fan_in = node.in_dims.iter().product();
            let mut stream = rng.stream(first_stream + i as u64);
            self.tensors[i] = init_gaussian_fanin(&node.dims(), fan_in, &mut stream)?;
        }
        Ok(())
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn node(&self, i: usize) -> &Tensor<T> {
        &self.tensors[i]
    }

    pub fn set_node(&mut self, i: usize, t: Tensor<T>) -> Result<()> {
        let want = self.topo.nodes[i].dims();
        if t.dims() != want.as_slice() {
            return Err(Error::Shape(format!("node {i} expects {want:?}, got {:?}", t.dims())));
        }
        self.tensors[i] = t;
        Ok(())
    }

    /// Sets every disentangler to the identity map.
    pub fn set_identity_disentanglers(&mut self) {
        for (i, node) in self.topo.nodes.iter().enumerate() {
            if node.role == Role::Disentangler {
                self.tensors[i] = identity_node(&node.in_dims);
            }
        }
    }

    pub fn in_width(&self) -> usize {
        self.topo.in_width()
    }

    pub fn out_width(&self) -> usize {
        self.topo.out_width()
    }

    pub fn cast<U: Scalar>(&self) -> ContractionGraph<U> {
        ContractionGraph {
            topo: self.topo.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }
}

/// `T[a.., b..] = delta(a, b)` for in-legs `dims` and out-legs `dims`.
pub(crate) fn identity_node<T: Scalar>(dims: &[usize]) -> Tensor<T> {
    let p: usize = dims.iter().product();
    let all: Vec<usize> = dims.iter().chain(dims).copied().collect();
    Tensor::eye(p).reshape(&all).expect("identity volume")
}

/// Pins each picked output leg at index 0: the node tensor is sliced there and
/// the leg moves to the fixed list.
pub fn fix_outputs<T: Scalar>(
    mut g: ContractionGraph<T>,
    picks: &[LegRef],
) -> Result<ContractionGraph<T>> {
    for &leg in picks {
        g.topo.fix_output(leg, 0)?;
        let t = g.tensors[leg.node].select(leg.leg, 0)?;
        g.tensors[leg.node] = t;
    }
    Ok(g)
}

fn build_kind<T: Scalar>(spec: &LayerSpec, kind: LayerKind) -> Result<ContractionGraph<T>> {
    if spec.kind != kind {
        return Err(Error::Spec(format!("expected a {kind:?} spec, got {:?}", spec.kind)));
    }
    ContractionGraph::build(spec)
}

pub fn build_tt<T: Scalar>(spec: &LayerSpec) -> Result<ContractionGraph<T>> {
    build_kind(spec, LayerKind::Tt)
}

pub fn build_tree<T: Scalar>(spec: &LayerSpec) -> Result<ContractionGraph<T>> {
    build_kind(spec, LayerKind::Tree)
}

pub fn build_mera<T: Scalar>(spec: &LayerSpec) -> Result<ContractionGraph<T>> {
    build_kind(spec, LayerKind::Mera)
}
