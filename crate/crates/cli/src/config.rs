use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};
use tnlayers::layers::TopElement;
use tnlayers::nn::{HeadKind, ModelConfig, TrainConfig};

use crate::error::CliError;

pub const DATA_DIR_ENV: &str = "TNLAYERS_DATA_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Train,
    Verify,
    Report,
    Bench,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    #[default]
    Cifar10,
    Cifar100,
    Mnist,
    Synthetic,
}

impl DatasetKind {
    pub fn input(self) -> [usize; 3] {
        match self {
            DatasetKind::Mnist => [28, 28, 1],
            _ => [32, 32, 3],
        }
    }

    pub fn classes(self) -> usize {
        match self {
            DatasetKind::Cifar100 => 100,
            _ => 10,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Head {
    Fc1,
    Fc2,
    Mera,
    Tt,
}

impl From<Head> for HeadKind {
    fn from(h: Head) -> Self {
        match h {
            Head::Fc1 => HeadKind::Fc1,
            Head::Fc2 => HeadKind::Fc2,
            Head::Mera => HeadKind::Mera,
            Head::Tt => HeadKind::Tt,
        }
    }
}

/// Conv stack width: the full 64/64/256 channels, or 16/16/64.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Width {
    #[default]
    Full,
    Desk,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Fault {
    ContractLhsTwice,
}

#[derive(Debug, Parser)]
#[command(name = "tnlayers", version, about = "Train and check MERA / tensor-train factorized layers")]
pub struct Args {
    /// What to run; `--command` does the same.
    #[arg(value_enum)]
    pub command: Option<Command>,
    #[arg(long = "command", value_enum, id = "command_flag")]
    pub command_flag: Option<Command>,
    /// Start from a saved config.json; other flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub dataset: Option<DatasetKind>,
    /// Dataset directory; falls back to $TNLAYERS_DATA_DIR.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub head: Option<Head>,
    /// Width `n` of the first fc2 layer.
    #[arg(long)]
    pub fc2_width: Option<usize>,
    #[arg(long)]
    pub tt_bond: Option<usize>,
    /// Rank of the element closing a MERA or tree head (6 or 4).
    #[arg(long)]
    pub mera_final_rank: Option<usize>,
    #[arg(long, value_enum)]
    pub width: Option<Width>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training images to keep (validation and test keep 1000 each).
    #[arg(long)]
    pub subset: Option<usize>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub check_interval: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run directories for `report`.
    #[arg(long = "run", num_args = 1..)]
    pub runs: Vec<PathBuf>,
    /// Largest mode count in the `bench` sweep.
    #[arg(long, default_value_t = 12)]
    pub max_modes: usize,
    #[arg(long, value_enum, hide = true)]
    pub inject_fault: Option<Fault>,
}

impl Args {
    pub fn command(&self) -> Result<Command, CliError> {
        match (self.command, self.command_flag) {
            (Some(a), Some(b)) if a != b => Err(CliError::Config(format!(
                "command given twice: {a:?} and {b:?}"
            ))),
            (Some(c), _) | (None, Some(c)) => Ok(c),
            (None, None) => Err(CliError::Config("no command given (train, verify, report, bench)".into())),
        }
    }
}

/// Everything a run depends on; `config.json` in the output directory is a
/// complete copy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub command: Command,
    pub dataset: DatasetKind,
    pub data_dir: Option<PathBuf>,
    pub width: Width,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub subset: Option<usize>,
    pub subset_val: usize,
    pub subset_test: usize,
    /// Noise of the synthetic dataset, in pixel units.
    pub synthetic_noise: f64,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: Command::Train,
            dataset: DatasetKind::Cifar10,
            data_dir: None,
            width: Width::Full,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            subset: None,
            subset_val: 1000,
            subset_test: 1000,
            synthetic_noise: 60.0,
            out: PathBuf::from("run"),
        }
    }
}

fn apply_width(model: &mut ModelConfig, width: Width) {
    let base = match width {
        Width::Full => ModelConfig::default(),
        Width::Desk => ModelConfig::desk(model.head, model.classes),
    };
    model.conv_channels = base.conv_channels;
    model.head_in = base.head_in;
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Config file (if any) with the explicitly given flags applied on top.
    pub fn resolve(args: &Args) -> Result<Self, CliError> {
        let from_file = args.config.is_some();
        let mut c = match &args.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        c.command = args.command()?;
        if let Some(d) = args.dataset {
            c.dataset = d;
        }
        if args.dataset.is_some() || !from_file {
            c.model.input = c.dataset.input();
            c.model.classes = c.dataset.classes();
        }
        if let Some(h) = args.head {
            c.model.head = h.into();
        }
        if let Some(w) = args.width {
            c.width = w;
        }
        if args.width.is_some() || !from_file {
            apply_width(&mut c.model, c.width);
        }
        if let Some(n) = args.fc2_width {
            c.model.fc2_width = n;
        } else if !from_file && c.dataset == DatasetKind::Cifar100 {
            c.model.fc2_width = 10;
        }
        if let Some(b) = args.tt_bond {
            c.model.tt_bond = b;
        }
        if let Some(r) = args.mera_final_rank {
            c.model.mera_top = TopElement::from_final_rank(r).map_err(|e| CliError::Config(e.to_string()))?;
        }
        if let Some(s) = args.seed {
            c.train.seed = s;
        }
        if let Some(s) = args.subset {
            c.subset = Some(s);
        }
        if let Some(m) = args.max_iter {
            c.train.max_iter = Some(m);
        }
        if let Some(k) = args.check_interval {
            c.train.check_interval = k;
        }
        if let Some(p) = args.patience {
            c.train.patience = p;
        }
        if let Some(b) = args.batch_size {
            c.train.batch_size = b;
        }
        if let Some(o) = &args.out {
            c.out = o.clone();
        }
        if let Some(d) = &args.data_dir {
            c.data_dir = Some(d.clone());
        }
        if c.data_dir.is_none() {
            c.data_dir = std::env::var_os(DATA_DIR_ENV).map(PathBuf::from);
        }
        c.model.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(c)
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::Runtime(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
    }
}
