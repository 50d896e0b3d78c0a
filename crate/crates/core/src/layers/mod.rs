//! Factorized linear layers as contraction graphs.
//!
//! A layer of width `d^n` is read as a map between `n` input modes and `n`
//! output modes of size `d`. Tensor-train layers chain one core per mode;
//! tree layers coarse-grain neighbouring modes pairwise; MERA layers add
//! disentanglers between neighbouring tree elements.

mod count;
mod eval;
mod graph;
mod topology;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use count::{loglog_slope, multiply_count, param_count};
pub use eval::{
    forward, forward_tape, forward_with, plan, to_dense, ContractionOrder, Plan, Step, DEFAULT_DENSE_CAP,
};
pub use graph::{build_mera, build_tree, build_tt, fix_outputs, ContractionGraph};
pub use topology::{Edge, FixedLeg, LegRef, NodeSpec, Role, Topology};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Dense,
    Tt,
    Tree,
    Mera,
}

/// How a tree or MERA closes once few solid wires remain.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TopElement {
    /// One element over the last two or three wires (rank 4 or rank 6).
    #[default]
    Single,
    /// Keep pairing with rank-4 elements until two wires remain.
    Rank4,
}

impl TopElement {
    /// Maps the `--mera-final-rank` value onto a closing rule.
    pub fn from_final_rank(rank: usize) -> Result<Self> {
        match rank {
            6 => Ok(TopElement::Single),
            4 => Ok(TopElement::Rank4),
            other => Err(Error::Spec(format!("final element rank must be 4 or 6, got {other}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedOutput {
    pub node: usize,
    pub leg: usize,
    pub value: usize,
}

/// Declarative description of a factorized layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_modes: usize,
    pub out_modes: usize,
    pub mode_dim: usize,
    pub bond_dim: usize,
    #[serde(default)]
    pub fixed_outputs: Vec<FixedOutput>,
    #[serde(default)]
    pub top: TopElement,
}

impl LayerSpec {
    /// Square layer with `modes` inputs and outputs of size `mode_dim`.
    pub fn new(kind: LayerKind, modes: usize, mode_dim: usize, bond_dim: usize) -> Self {
        Self {
            kind,
            in_modes: modes,
            out_modes: modes,
            mode_dim,
            bond_dim,
            fixed_outputs: Vec::new(),
            top: TopElement::Single,
        }
    }

    pub fn in_width(&self) -> usize {
        self.mode_dim.pow(self.in_modes as u32)
    }

    pub fn out_width(&self) -> usize {
        self.mode_dim
            .pow((self.out_modes - self.fixed_outputs.len().min(self.out_modes)) as u32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode_dim < 2 {
            return Err(Error::Spec(format!("mode dim {} < 2", self.mode_dim)));
        }
        if self.bond_dim < 1 {
            return Err(Error::Spec("bond dim must be at least 1".into()));
        }
        if self.in_modes == 0 || self.out_modes == 0 {
            return Err(Error::Spec("layer needs at least one mode per side".into()));
        }
        if self.kind != LayerKind::Dense && self.in_modes != self.out_modes {
            return Err(Error::Spec(format!(
                "{:?} layers are square in modes; narrow the output with fixed legs",
                self.kind
            )));
        }
        if self.fixed_outputs.len() >= self.out_modes {
            return Err(Error::Spec("every output leg is fixed".into()));
        }
        Ok(())
    }

    pub fn topology(&self) -> Result<Topology> {
        topology::build_topology(self)
    }
}
