use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{LayerKind, LayerSpec, TopElement};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Dense,
    TtCore,
    Tree,
    Disentangler,
    Final,
}

/// One small tensor of the graph. Its axes are the in-legs followed by the
/// out-legs; leg ids index that combined list.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub role: Role,
    pub in_dims: Vec<usize>,
    pub out_dims: Vec<usize>,
    /// Column (tree level, or core position for tensor trains).
    pub column: usize,
}

impl NodeSpec {
    pub fn dims(&self) -> Vec<usize> {
        self.in_dims.iter().chain(&self.out_dims).copied().collect()
    }

    pub fn legs(&self) -> usize {
        self.in_dims.len() + self.out_dims.len()
    }

    pub fn is_in_leg(&self, leg: usize) -> bool {
        leg < self.in_dims.len()
    }

    pub fn leg_dim(&self, leg: usize) -> usize {
        if self.is_in_leg(leg) {
            self.in_dims[leg]
        } else {
            self.out_dims[leg - self.in_dims.len()]
        }
    }

    pub fn volume(&self) -> usize {
        self.dims().iter().product()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LegRef {
    pub node: usize,
    pub leg: usize,
}

impl LegRef {
    pub fn new(node: usize, leg: usize) -> Self {
        Self { node, leg }
    }
}

/// Summed index pair, oriented from a producer out-leg to a consumer in-leg.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub from: LegRef,
    pub to: LegRef,
}

/// Output leg pinned to a constant index. The node keeps the axis with size 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedLeg {
    pub leg: LegRef,
    pub value: usize,
    pub original_dim: usize,
}

/// Shape and wiring of a factorized layer, without parameter values.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub kind: LayerKind,
    pub mode_dim: usize,
    pub nodes: Vec<NodeSpec>,
    pub edges: Vec<Edge>,
    pub inputs: Vec<LegRef>,
    pub outputs: Vec<LegRef>,
    pub fixed: Vec<FixedLeg>,
}

impl Topology {
    pub fn leg_dim(&self, leg: LegRef) -> usize {
        self.nodes[leg.node].leg_dim(leg.leg)
    }

    pub fn in_width(&self) -> usize {
        self.inputs.iter().map(|&l| self.leg_dim(l)).product()
    }

    pub fn out_width(&self) -> usize {
        self.outputs.iter().map(|&l| self.leg_dim(l)).product()
    }

    /// Sum over nodes of the product of leg dims; fixed legs count as 1.
    pub fn param_count(&self) -> usize {
        self.nodes.iter().map(NodeSpec::volume).sum()
    }

    /// Output legs in the order the second head layer fixes them: first-column
    /// dashed outputs of tree elements, or the output leg of each core.
    pub fn fixable_outputs(&self) -> Vec<LegRef> {
        match self.kind {
            LayerKind::Dense => Vec::new(),
            LayerKind::Tt => self
                .outputs
                .iter()
                .copied()
                .filter(|l| self.nodes[l.node].role == Role::TtCore)
                .collect(),
            LayerKind::Tree | LayerKind::Mera => self
                .outputs
                .iter()
                .copied()
                .filter(|l| {
                    let n = &self.nodes[l.node];
                    n.role == Role::Tree && n.column == 0
                })
                .collect(),
        }
    }

    /// Moves `leg` from the outputs to the fixed legs, pinned at `value`.
    pub fn fix_output(&mut self, leg: LegRef, value: usize) -> Result<()> {
        let pos = self
            .outputs
            .iter()
            .position(|&l| l == leg)
            .ok_or_else(|| Error::Spec(format!("{leg:?} is not an output leg")))?;
        let node = &mut self.nodes[leg.node];
        let slot = leg.leg - node.in_dims.len();
        let original_dim = node.out_dims[slot];
        if value >= original_dim {
            return Err(Error::Spec(format!(
                "fixed value {value} out of range for leg of size {original_dim}"
            )));
        }
        node.out_dims[slot] = 1;
        self.outputs.remove(pos);
        self.fixed.push(FixedLeg {
            leg,
            value,
            original_dim,
        });
        Ok(())
    }

    /// Checks that every leg is used exactly once, edges join equal sizes and
    /// point from earlier to later nodes in some topological order.
    pub fn validate(&self) -> Result<()> {
        let mut uses: HashMap<LegRef, usize> = HashMap::new();
        let mut bump = |l: LegRef| *uses.entry(l).or_default() += 1;
        for e in &self.edges {
            bump(e.from);
            bump(e.to);
        }
        self.inputs.iter().for_each(|&l| bump(l));
        self.outputs.iter().for_each(|&l| bump(l));
        self.fixed.iter().for_each(|f| bump(f.leg));
        for (i, node) in self.nodes.iter().enumerate() {
            for leg in 0..node.legs() {
                let n = uses.get(&LegRef::new(i, leg)).copied().unwrap_or(0);
                if n != 1 {
                    return Err(Error::Spec(format!("leg ({i}, {leg}) used {n} times")));
                }
            }
        }
        if uses.len() != self.nodes.iter().map(NodeSpec::legs).sum::<usize>() {
            return Err(Error::Spec("reference to a leg that does not exist".into()));
        }
        for e in &self.edges {
            if self.nodes[e.from.node].is_in_leg(e.from.leg) || !self.nodes[e.to.node].is_in_leg(e.to.leg) {
                return Err(Error::Spec(format!("edge {e:?} is not out-leg -> in-leg")));
            }
            if self.leg_dim(e.from) != self.leg_dim(e.to) {
                return Err(Error::Spec(format!("edge {e:?} joins unequal sizes")));
            }
        }
        for &l in &self.inputs {
            if !self.nodes[l.node].is_in_leg(l.leg) {
                return Err(Error::Spec(format!("input {l:?} is an out-leg")));
            }
        }
        for &l in self.outputs.iter().chain(self.fixed.iter().map(|f| &f.leg)) {
            if self.nodes[l.node].is_in_leg(l.leg) {
                return Err(Error::Spec(format!("output {l:?} is an in-leg")));
            }
        }
        // Kahn's algorithm for acyclicity
        let n = self.nodes.len();
        let mut indeg = vec![0usize; n];
        for e in &self.edges {
            indeg[e.to.node] += 1;
        }
        let mut ready: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut seen = 0;
        while let Some(i) = ready.pop() {
            seen += 1;
            for e in self.edges.iter().filter(|e| e.from.node == i) {
                indeg[e.to.node] -= 1;
                if indeg[e.to.node] == 0 {
                    ready.push(e.to.node);
                }
            }
        }
        if seen != n {
            return Err(Error::Spec("graph has a cycle".into()));
        }
        Ok(())
    }
}

pub(super) fn build_topology(spec: &LayerSpec) -> Result<Topology> {
    spec.validate()?;
    let mut topo = match spec.kind {
        LayerKind::Dense => dense(spec.in_modes, spec.out_modes, spec.mode_dim),
        LayerKind::Tt => tensor_train(spec.in_modes, spec.mode_dim, spec.bond_dim)?,
        LayerKind::Tree => hierarchical(spec, false)?,
        LayerKind::Mera => hierarchical(spec, true)?,
    };
    for f in &spec.fixed_outputs {
        topo.fix_output(LegRef::new(f.node, f.leg), f.value)?;
    }
    Ok(topo)
}

fn dense(in_modes: usize, out_modes: usize, d: usize) -> Topology {
    Topology {
        kind: LayerKind::Dense,
        mode_dim: d,
        nodes: vec![NodeSpec {
            role: Role::Dense,
            in_dims: vec![d; in_modes],
            out_dims: vec![d; out_modes],
            column: 0,
        }],
        edges: Vec::new(),
        inputs: (0..in_modes).map(|l| LegRef::new(0, l)).collect(),
        outputs: (in_modes..in_modes + out_modes).map(|l| LegRef::new(0, l)).collect(),
        fixed: Vec::new(),
    }
}

/// Chain of cores `(i, j, a1)`, `(a, i, j, a')`, .., `(a, i, j)`.
fn tensor_train(n: usize, d: usize, bond: usize) -> Result<Topology> {
    if n < 2 {
        return Err(Error::Spec(format!(
            "tensor train needs at least 2 modes, got {n}; use a dense layer"
        )));
    }
    let mut nodes = Vec::with_capacity(n);
    let mut edges = Vec::new();
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    for k in 0..n {
        let first = k == 0;
        let last = k == n - 1;
        let in_dims = if first { vec![d] } else { vec![bond, d] };
        let out_dims = if last { vec![d] } else { vec![d, bond] };
        let phys_in = if first { 0 } else { 1 };
        let phys_out = in_dims.len();
        inputs.push(LegRef::new(k, phys_in));
        outputs.push(LegRef::new(k, phys_out));
        if !last {
            edges.push(Edge {
                from: LegRef::new(k, phys_out + 1),
                to: LegRef::new(k + 1, 0),
            });
        }
        nodes.push(NodeSpec {
            role: Role::TtCore,
            in_dims,
            out_dims,
            column: k,
        });
    }
    Ok(Topology {
        kind: LayerKind::Tt,
        mode_dim: d,
        nodes,
        edges,
        inputs,
        outputs,
        fixed: Vec::new(),
    })
}

#[derive(Clone, Copy)]
enum Wire {
    Input(usize),
    Leg(LegRef),
}

struct Builder {
    nodes: Vec<NodeSpec>,
    edges: Vec<Edge>,
    inputs: Vec<Option<LegRef>>,
    outputs: Vec<LegRef>,
}

impl Builder {
    fn add(&mut self, role: Role, column: usize, feeds: &[(Wire, usize)], out_dims: Vec<usize>) -> usize {
        let id = self.nodes.len();
        for (leg, &(wire, _)) in feeds.iter().enumerate() {
            let to = LegRef::new(id, leg);
            match wire {
                Wire::Input(k) => self.inputs[k] = Some(to),
                Wire::Leg(from) => self.edges.push(Edge { from, to }),
            }
        }
        self.nodes.push(NodeSpec {
            role,
            in_dims: feeds.iter().map(|&(_, dim)| dim).collect(),
            out_dims,
            column,
        });
        id
    }
}

/// Tree (and, with disentanglers, MERA) construction for any number of modes.
///
/// Each level takes `m` solid wires. Disentanglers sit on the interior pairs
/// `(1,2), (3,4), ..` (open boundary), then tree elements on `(0,1), (2,3), ..`
/// each emit one dashed output of size `d` and one solid wire of size `D`; an
/// unpaired last wire passes through to the next level. Levels repeat while
/// more than three wires (two for [`TopElement::Rank4`]) remain, and a single
/// final element maps the survivors to dashed outputs. Twelve modes give
/// 5 + 2 disentanglers, 6 + 3 tree elements and a rank-6 final element.
fn hierarchical(spec: &LayerSpec, disentangle: bool) -> Result<Topology> {
    let (n, d, bond) = (spec.in_modes, spec.mode_dim, spec.bond_dim);
    if n < 2 {
        return Err(Error::Spec(format!("{:?} layer needs at least 2 modes, got {n}", spec.kind)));
    }
    let stop = match spec.top {
        TopElement::Single => 3,
        TopElement::Rank4 => 2,
    };
    let mut b = Builder {
        nodes: Vec::new(),
        edges: Vec::new(),
        inputs: vec![None; n],
        outputs: Vec::new(),
    };
    let mut wires: Vec<(Wire, usize)> = (0..n).map(|k| (Wire::Input(k), d)).collect();
    let mut column = 0;
    while wires.len() > stop {
        let m = wires.len();
        if disentangle {
            for k in (1..m - 1).step_by(2) {
                let feeds = [wires[k], wires[k + 1]];
                let dims = vec![feeds[0].1, feeds[1].1];
                let id = b.add(Role::Disentangler, column, &feeds, dims.clone());
                wires[k] = (Wire::Leg(LegRef::new(id, 2)), dims[0]);
                wires[k + 1] = (Wire::Leg(LegRef::new(id, 3)), dims[1]);
            }
        }
        let mut next = Vec::with_capacity(m / 2 + 1);
        for k in (0..m - 1).step_by(2) {
            let id = b.add(Role::Tree, column, &[wires[k], wires[k + 1]], vec![d, bond]);
            b.outputs.push(LegRef::new(id, 2));
            next.push((Wire::Leg(LegRef::new(id, 3)), bond));
        }
        if m % 2 == 1 {
            next.push(wires[m - 1]);
        }
        wires = next;
        column += 1;
    }
    let m = wires.len();
    let id = b.add(Role::Final, column, &wires, vec![d; m]);
    b.outputs.extend((m..2 * m).map(|leg| LegRef::new(id, leg)));

    let inputs = b
        .inputs
        .into_iter()
        .map(|l| l.ok_or_else(|| Error::Spec("unconnected input".into())))
        .collect::<Result<Vec<_>>>()?;
    Ok(Topology {
        kind: spec.kind,
        mode_dim: d,
        nodes: b.nodes,
        edges: b.edges,
        inputs,
        outputs: b.outputs,
        fixed: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count_roles(t: &Topology, role: Role) -> usize {
        t.nodes.iter().filter(|n| n.role == role).count()
    }

    #[test]
    fn mera_twelve_modes_layout() {
        let t = LayerSpec::new(LayerKind::Mera, 12, 2, 2).topology().unwrap();
        assert_eq!(count_roles(&t, Role::Disentangler), 7);
        assert_eq!(count_roles(&t, Role::Tree), 9);
        assert_eq!(count_roles(&t, Role::Final), 1);
        assert_eq!(t.nodes.len(), 17);
        assert_eq!(t.param_count(), 7 * 16 + 9 * 16 + 64);

        // first-column disentanglers sit on (i2,i3), .., (i10,i11) (1-based)
        let dis0: Vec<Vec<usize>> = t
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.role == Role::Disentangler && n.column == 0)
            .map(|(id, _)| {
                t.inputs
                    .iter()
                    .enumerate()
                    .filter(|(_, l)| l.node == id)
                    .map(|(k, _)| k + 1)
                    .collect()
            })
            .collect();
        assert_eq!(dis0, vec![vec![2, 3], vec![4, 5], vec![6, 7], vec![8, 9], vec![10, 11]]);
        assert_eq!(
            t.nodes.iter().filter(|n| n.role == Role::Tree && n.column == 0).count(),
            6
        );
        assert_eq!(
            t.nodes.iter().filter(|n| n.role == Role::Disentangler && n.column == 1).count(),
            2
        );
        assert_eq!(t.nodes.iter().filter(|n| n.role == Role::Tree && n.column == 1).count(), 3);
        let last = t.nodes.last().unwrap();
        assert_eq!((last.in_dims.len(), last.out_dims.len()), (3, 3));
        assert_eq!(t.in_width(), 4096);
        assert_eq!(t.out_width(), 4096);
        t.validate().unwrap();
    }

    #[test]
    fn power_of_two_disentangler_counts() {
        // 2^k - 1 disentanglers before the column of 2^k tree tensors
        let t = LayerSpec::new(LayerKind::Mera, 16, 2, 2).topology().unwrap();
        let per_column = |col| {
            (
                t.nodes.iter().filter(|n| n.role == Role::Disentangler && n.column == col).count(),
                t.nodes.iter().filter(|n| n.role == Role::Tree && n.column == col).count(),
            )
        };
        assert_eq!(per_column(0), (7, 8));
        assert_eq!(per_column(1), (3, 4));
        assert_eq!(per_column(2), (1, 2));
        assert_eq!(t.nodes.last().unwrap().in_dims.len(), 2);
    }

    #[test]
    fn tree_four_modes() {
        let t = LayerSpec::new(LayerKind::Tree, 4, 2, 2).topology().unwrap();
        assert_eq!(t.nodes.len(), 3);
        assert!(t.nodes.iter().all(|n| n.legs() == 4));
        assert_eq!(t.param_count(), 48);
        t.validate().unwrap();
    }

    #[test]
    fn tree_two_modes_is_single_node() {
        let t = LayerSpec::new(LayerKind::Tree, 2, 3, 2).topology().unwrap();
        assert_eq!(t.nodes.len(), 1);
        assert_eq!(t.nodes[0].dims(), vec![3, 3, 3, 3]);
    }

    #[test]
    fn tt_twelve_modes_counts() {
        let t = LayerSpec::new(LayerKind::Tt, 12, 2, 3).topology().unwrap();
        assert_eq!(t.param_count(), 2 * (2 * 2 * 3) + 10 * (3 * 2 * 2 * 3));
        assert_eq!(t.param_count(), 384);
        assert_eq!(t.nodes[0].dims(), vec![2, 2, 3]);
        assert_eq!(t.nodes[5].dims(), vec![3, 2, 2, 3]);
        t.validate().unwrap();
    }

    #[test]
    fn too_few_modes_rejected() {
        assert!(LayerSpec::new(LayerKind::Tt, 1, 2, 2).topology().is_err());
        assert!(LayerSpec::new(LayerKind::Tree, 1, 2, 2).topology().is_err());
        assert!(LayerSpec::new(LayerKind::Mera, 1, 2, 2).topology().is_err());
    }

    #[test]
    fn odd_mode_counts_build_valid_graphs() {
        for n in 2..=13 {
            for kind in [LayerKind::Tree, LayerKind::Mera] {
                for top in [TopElement::Single, TopElement::Rank4] {
                    let mut spec = LayerSpec::new(kind, n, 2, 3);
                    spec.top = top;
                    let t = spec.topology().unwrap();
                    t.validate().unwrap();
                    assert_eq!(t.outputs.len(), n);
                    assert_eq!(t.in_width(), 1 << n);
                }
            }
        }
    }

    #[test]
    fn fixing_outputs_shrinks_width() {
        let mut t = LayerSpec::new(LayerKind::Mera, 12, 2, 2).topology().unwrap();
        let picks = t.fixable_outputs();
        assert_eq!(picks.len(), 6);
        t.fix_output(picks[0], 0).unwrap();
        assert_eq!(t.out_width(), 2048);
        for &p in &picks[1..] {
            t.fix_output(p, 0).unwrap();
        }
        assert_eq!(t.out_width(), 64);
        assert_eq!(t.param_count(), 320 - 6 * 8);
        assert!(t.fix_output(picks[0], 0).is_err());
        t.validate().unwrap();
    }

    #[test]
    fn tt_half_fixed_matches_table_count() {
        let mut t = LayerSpec::new(LayerKind::Tt, 12, 2, 3).topology().unwrap();
        for p in t.fixable_outputs().into_iter().take(6) {
            t.fix_output(p, 0).unwrap();
        }
        assert_eq!(t.out_width(), 64);
        // 384 + 288 + classifier 640 reproduces the 1312 tensor-train head
        assert_eq!(t.param_count(), 288);
    }
}
