use std::path::Path;

use serde::{Deserialize, Serialize};
use tnlayers::data::{load_cifar, load_mnist, synthetic_images, CifarVariant, Dataset, Normalizer, Splits, NormMode};
use tnlayers::init::Rng;
use tnlayers::nn::{save_checkpoint, train, HeadKind, Model, ModelConfig, ParamCounts, StopReason, TrainData};

use crate::config::{DatasetKind, RunConfig, DATA_DIR_ENV};
use crate::error::{io, CliError};

const SYNTHETIC_SEED: u64 = 0x5eed;

/// Contents of `summary.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Summary {
    pub dataset: DatasetKind,
    pub network: String,
    pub head: HeadKind,
    pub seed: u64,
    pub best_iteration: usize,
    pub best_val_acc: f64,
    pub test_acc: f64,
    pub iterations: usize,
    pub stop: StopReason,
    pub params: ParamCounts,
}

pub fn network_label(m: &ModelConfig) -> String {
    match m.head {
        HeadKind::Fc1 => "FC-1".into(),
        HeadKind::Fc2 => format!("FC-2 (n={})", m.fc2_width),
        HeadKind::Mera => "MERA".into(),
        HeadKind::Tt => format!("TT (D={})", m.tt_bond),
    }
}

fn data_err(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

pub fn load_splits(c: &RunConfig) -> Result<Splits, CliError> {
    let dir = || {
        c.data_dir.clone().ok_or_else(|| {
            CliError::Data(format!("{:?} needs --data-dir or ${DATA_DIR_ENV}", c.dataset))
        })
    };
    let splits = match c.dataset {
        DatasetKind::Cifar10 | DatasetKind::Cifar100 => {
            let variant = if c.dataset == DatasetKind::Cifar10 {
                CifarVariant::Ten
            } else {
                CifarVariant::Hundred
            };
            let (train, test) = load_cifar(&dir()?, variant).map_err(data_err)?;
            Splits::standard(train, test).map_err(data_err)?
        }
        DatasetKind::Mnist => {
            let (train, test) = load_mnist(&dir()?).map_err(data_err)?;
            Splits::standard(train, test).map_err(data_err)?
        }
        DatasetKind::Synthetic => {
            let n_train = c.subset.unwrap_or(5000);
            let total = n_train + c.subset_val + c.subset_test;
            let all = synthetic_images(total, 10, 32, 3, c.synthetic_noise, SYNTHETIC_SEED);
            let test = all.slice(n_train + c.subset_val..total);
            Splits::holdout(all.slice(0..n_train + c.subset_val), test, c.subset_val).map_err(data_err)?
        }
    };
    Ok(match c.subset {
        Some(n) => splits.subset(n, c.subset_val, c.subset_test),
        None => splits,
    })
}

fn check_classes(ds: &Dataset, model: &ModelConfig) -> Result<(), CliError> {
    if ds.classes != model.classes {
        return Err(CliError::Config(format!(
            "dataset has {} classes, model is configured for {}",
            ds.classes, model.classes
        )));
    }
    Ok(())
}

pub fn run(c: &RunConfig) -> Result<(), CliError> {
    let out = &c.out;
    std::fs::create_dir_all(out).map_err(|e| io(out, e))?;
    c.write(&out.join("config.json"))?;

    let splits = load_splits(c)?;
    check_classes(&splits.train, &c.model)?;
    let norm = Normalizer::fit(&splits.train, NormMode::PerPixel).map_err(data_err)?;
    let (train_set, val, test) = (norm.apply(&splits.train), norm.apply(&splits.val), norm.apply(&splits.test));
    eprintln!(
        "{}: {} train / {} val / {} test, head {}",
        out.display(),
        train_set.len(),
        val.len(),
        test.len(),
        network_label(&c.model)
    );

    let model = Model::<f32>::build(&c.model, &Rng::new(c.train.seed))?;
    let params = c.model.param_counts()?;
    let metrics_path = out.join("metrics.csv");
    let mut writer = csv::Writer::from_path(&metrics_path).map_err(|e| io(&metrics_path, e))?;
    let mut write_err = None;
    let data = TrainData {
        train: &train_set,
        val: &val,
        test: &test,
    };
    let outcome = train(model, &data, &c.train, |row| {
        eprintln!(
            "iter {:>6}  loss {:.4}  val {:.4}  test {:.4}",
            row.iteration, row.train_loss, row.val_acc, row.test_acc
        );
        if let Err(e) = writer.serialize(row).and_then(|_| writer.flush().map_err(Into::into)) {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(io(&metrics_path, e));
    }

    save_checkpoint(&out.join("best.ckpt"), &outcome.best)?;
    let summary = Summary {
        dataset: c.dataset,
        network: network_label(&c.model),
        head: c.model.head,
        seed: c.train.seed,
        best_iteration: outcome.best.iteration,
        best_val_acc: outcome.best.val_acc,
        test_acc: outcome.best.test_acc,
        iterations: outcome.iterations,
        stop: outcome.stop,
        params,
    };
    write_json(&out.join("summary.json"), &summary)?;
    eprintln!(
        "best val {:.4} at iteration {}, test {:.4}",
        summary.best_val_acc, summary.best_iteration, summary.test_acc
    );
    Ok(())
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| io(path, e))
}
