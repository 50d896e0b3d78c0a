use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use tnlayers::nn::{HeadKind, ModelConfig};

use crate::config::{DatasetKind, RunConfig};
use crate::error::{io, CliError};
use crate::train::{network_label, Summary};

#[derive(Clone, Debug, Serialize)]
pub struct Row {
    pub dataset: DatasetKind,
    pub network: String,
    pub fc_params: usize,
    pub total_params: usize,
    pub compression_fc: f64,
    pub compression_total: f64,
    pub runs: usize,
    pub acc_mean: Option<f64>,
    pub acc_std: Option<f64>,
}

fn read_run(dir: &Path) -> Result<(RunConfig, Summary), String> {
    let cfg = RunConfig::load(&dir.join("config.json")).map_err(|e| e.to_string())?;
    let text = std::fs::read_to_string(dir.join("summary.json"))
        .map_err(|e| format!("{}: {e}", dir.join("summary.json").display()))?;
    let summary = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", dir.display()))?;
    if !dir.join("metrics.csv").is_file() {
        return Err(format!("{}: metrics.csv missing", dir.display()));
    }
    Ok((cfg, summary))
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Parameter columns for one network; compression is relative to FC-1 on
/// the same conv stack and class count.
pub fn param_row(dataset: DatasetKind, model: &ModelConfig) -> Result<Row, CliError> {
    let counts = model.param_counts()?;
    let fc1 = ModelConfig {
        head: HeadKind::Fc1,
        ..model.clone()
    }
    .param_counts()?;
    Ok(Row {
        dataset,
        network: network_label(model),
        fc_params: counts.head,
        total_params: counts.total(),
        compression_fc: fc1.head as f64 / counts.head as f64,
        compression_total: fc1.total() as f64 / counts.total() as f64,
        runs: 0,
        acc_mean: None,
        acc_std: None,
    })
}

/// Parameter rows of the default networks when no runs are given.
fn default_rows() -> Result<Vec<Row>, CliError> {
    let mut rows = Vec::new();
    for (dataset, fc2) in [(DatasetKind::Cifar10, 5), (DatasetKind::Cifar100, 10)] {
        for head in HeadKind::ALL {
            let m = ModelConfig {
                fc2_width: fc2,
                ..ModelConfig::with_head(head, dataset.classes())
            };
            rows.push(param_row(dataset, &m)?);
        }
    }
    Ok(rows)
}

pub fn build_rows(runs: &[std::path::PathBuf]) -> Result<(Vec<Row>, Vec<String>), CliError> {
    if runs.is_empty() {
        return Ok((default_rows()?, Vec::new()));
    }
    let mut missing = Vec::new();
    let mut groups: BTreeMap<(String, String), (Row, Vec<f64>)> = BTreeMap::new();
    for dir in runs {
        match read_run(dir) {
            Ok((cfg, summary)) => {
                let row = param_row(cfg.dataset, &cfg.model)?;
                let key = (format!("{:?}", cfg.dataset), row.network.clone());
                groups.entry(key).or_insert_with(|| (row, Vec::new())).1.push(summary.test_acc);
            }
            Err(e) => missing.push(e),
        }
    }
    let rows = groups
        .into_values()
        .map(|(mut row, accs)| {
            let (m, s) = mean_std(&accs);
            row.runs = accs.len();
            row.acc_mean = Some(m);
            row.acc_std = Some(s);
            row
        })
        .collect();
    Ok((rows, missing))
}

pub fn render(rows: &[Row]) -> String {
    let mut out = format!(
        "{:<10} {:<12} {:>12} {:>12} {:>10} {:>10} {:>5} {:>16}\n",
        "dataset", "network", "fc params", "total", "comp fc", "comp tot", "runs", "accuracy"
    );
    for r in rows {
        let acc = match (r.acc_mean, r.acc_std) {
            (Some(m), Some(s)) => format!("{:.2} ± {:.2}", 100.0 * m, 100.0 * s),
            _ => "-".into(),
        };
        out += &format!(
            "{:<10} {:<12} {:>12} {:>12} {:>10.1} {:>10.1} {:>5} {:>16}\n",
            format!("{:?}", r.dataset).to_lowercase(),
            r.network,
            r.fc_params,
            r.total_params,
            r.compression_fc,
            r.compression_total,
            r.runs,
            acc
        );
    }
    out
}

pub fn run(runs: &[std::path::PathBuf], out: &Path) -> Result<(), CliError> {
    let (rows, missing) = build_rows(runs)?;
    for m in &missing {
        eprintln!("skipped: {m}");
    }
    print!("{}", render(&rows));
    std::fs::create_dir_all(out).map_err(|e| io(out, e))?;
    let path = out.join("report.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| io(&path, e))?;
    for r in &rows {
        w.serialize(r).map_err(|e| io(&path, e))?;
    }
    w.flush().map_err(|e| io(&path, e))?;
    Ok(())
}
