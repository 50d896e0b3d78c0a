use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::activation::Mode;
use super::adam::{Adam, AdamConfig};
use super::loss::accuracy;
use super::model::{Model, ModelConfig};
use crate::autodiff::Tape;
use crate::data::{augment, BatchStream, FloatSet};
use crate::error::{Error, Result};
use crate::init::Rng;
use crate::tensor::{read_tensor, write_tensor, Tensor};

const DROPOUT_STREAM_BASE: u64 = 2 << 40;
const AUGMENT_STREAM_BASE: u64 = 3 << 40;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub check_interval: usize,
    pub patience: usize,
    /// Hard cap on iterations; `None` runs until patience runs out.
    pub max_iter: Option<usize>,
    pub augment: bool,
    pub adam: AdamConfig,
    pub eval_batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 50,
            check_interval: 500,
            patience: 10,
            max_iter: None,
            augment: true,
            adam: AdamConfig::default(),
            eval_batch: 500,
            seed: 0,
        }
    }
}

/// Outcome of one validation check.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Check {
    Improved,
    /// Checks since the last improvement.
    Waiting(usize),
    Stop,
}

/// Stops once validation accuracy has not improved for `patience`
/// consecutive checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: Option<f64>,
    pub waited: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            waited: 0,
        }
    }

    pub fn observe(&mut self, val_acc: f64) -> Check {
        if self.best.is_none_or(|b| val_acc > b) {
            self.best = Some(val_acc);
            self.waited = 0;
            return Check::Improved;
        }
        self.waited += 1;
        if self.waited >= self.patience {
            Check::Stop
        } else {
            Check::Waiting(self.waited)
        }
    }
}

/// One line of `metrics.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iteration: usize,
    /// Mean batch loss since the previous check.
    pub train_loss: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub wall_ms: u64,
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Patience,
    MaxIter,
}

/// Everything needed to resume or evaluate a run at one check.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: Model<f32>,
    pub adam: Adam<f32>,
    pub seed: u64,
    pub iteration: usize,
    /// `(epoch, offset)` of the batch stream.
    pub cursor: (u64, usize),
    pub stopping: EarlyStopping,
    pub val_acc: f64,
    pub test_acc: f64,
    /// Rows of the metrics log written so far.
    pub metrics_rows: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// State at the check with the highest validation accuracy.
    pub best: TrainState,
    pub metrics: Vec<MetricsRow>,
    /// Loss of every training batch, in order.
    pub losses: Vec<f64>,
    pub iterations: usize,
    pub stop: StopReason,
}

/// Train, validation and test splits, already normalized.
pub struct TrainData<'a> {
    pub train: &'a FloatSet,
    pub val: &'a FloatSet,
    pub test: &'a FloatSet,
}

fn gather(set: &FloatSet, idx: &[usize], aug: Option<&Rng>, iteration: usize) -> Result<(Tensor<f32>, Vec<usize>)> {
    let (h, w, c) = (set.height, set.width, set.channels);
    let mut x = Vec::with_capacity(idx.len() * set.image_len());
    let mut stream = aug.map(|r| r.stream(AUGMENT_STREAM_BASE + iteration as u64));
    for &i in idx {
        match stream.as_mut() {
            Some(rng) => x.extend(augment(set.image(i), h, w, c, rng)),
            None => x.extend_from_slice(set.image(i)),
        }
    }
    let labels = idx.iter().map(|&i| set.labels[i]).collect();
    Ok((Tensor::new(vec![idx.len(), h, w, c], x)?, labels))
}

/// Fraction of `set` the model classifies correctly (eval mode).
pub fn evaluate(model: &Model<f32>, set: &FloatSet, batch: usize) -> Result<f64> {
    if set.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0.0;
    let all: Vec<usize> = (0..set.len()).collect();
    for chunk in all.chunks(batch.max(1)) {
        let (x, labels) = gather(set, chunk, None, 0)?;
        let logits = model.predict(x)?;
        correct += accuracy(&logits, &labels) * chunk.len() as f64;
    }
    Ok(correct / set.len() as f64)
}

fn check_shapes(cfg: &ModelConfig, data: &TrainData) -> Result<()> {
    for (name, s) in [("train", data.train), ("val", data.val), ("test", data.test)] {
        if [s.height, s.width, s.channels] != cfg.input {
            return Err(Error::Config(format!(
                "{name} images are {}x{}x{}, the model takes {:?}",
                s.height, s.width, s.channels, cfg.input
            )));
        }
        if s.labels.iter().any(|&l| l >= cfg.classes) {
            return Err(Error::Config(format!("{name} labels exceed {} classes", cfg.classes)));
        }
    }
    if data.train.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    Ok(())
}

/// Trains with Adam on seeded batches, checking validation and test accuracy
/// every `check_interval` iterations (and at the last one). `on_check` sees
/// each metrics row as it is produced.
pub fn train(
    model: Model<f32>,
    data: &TrainData,
    cfg: &TrainConfig,
    mut on_check: impl FnMut(&MetricsRow),
) -> Result<TrainOutcome> {
    check_shapes(&model.config, data)?;
    if cfg.batch_size < 2 && model.config.batch_norm {
        return Err(Error::BatchTooSmall(cfg.batch_size));
    }
    if cfg.check_interval == 0 || cfg.patience == 0 {
        return Err(Error::Config("check interval and patience must be positive".into()));
    }
    let rng = Rng::new(cfg.seed);
    let mut model = model;
    let mut adam = Adam::new(cfg.adam, &model.params);
    let mut stream = BatchStream::new(data.train.len(), cfg.batch_size, rng);
    let mut stopping = EarlyStopping::new(cfg.patience);
    let mut metrics = Vec::new();
    let mut losses = Vec::new();
    let mut best: Option<TrainState> = None;
    let start = Instant::now();
    let mut since_check = 0.0;
    let mut since_count = 0usize;
    let mut iteration = 0usize;
    let stop = loop {
        let idx = stream.next().expect("batch stream is endless");
        iteration += 1;
        let (x, labels) = gather(data.train, &idx, cfg.augment.then_some(&rng), iteration)?;
        let mut tape = Tape::new();
        let p = model.record_params(&mut tape);
        let xv = tape.constant(x);
        let mut drop_rng = rng.stream(DROPOUT_STREAM_BASE + iteration as u64);
        let f = model.forward(&mut tape, &p, xv, Mode::Train, &mut drop_rng)?;
        let loss_var = tape.softmax_xent(f.logits, &labels)?;
        let loss = tape.value(loss_var).data()[0] as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss {loss} at iteration {iteration} (batch of {}, first item {})",
                idx.len(),
                idx[0]
            )));
        }
        let grads = tape.backward(loss_var, 1.0)?;
        let g: Vec<Option<&Tensor<f32>>> = (0..model.params.len()).map(|i| grads.get(i)).collect();
        adam.step(&mut model.params, &g, &model.names)?;
        model.update_running(&f.stats);
        losses.push(loss);
        since_check += loss;
        since_count += 1;

        let at_cap = cfg.max_iter.is_some_and(|m| iteration >= m);
        if iteration.is_multiple_of(cfg.check_interval) || at_cap {
            let val_acc = evaluate(&model, data.val, cfg.eval_batch)?;
            let test_acc = evaluate(&model, data.test, cfg.eval_batch)?;
            let row = MetricsRow {
                iteration,
                train_loss: since_check / since_count as f64,
                val_acc,
                test_acc,
                wall_ms: start.elapsed().as_millis() as u64,
            };
            on_check(&row);
            metrics.push(row);
            since_check = 0.0;
            since_count = 0;
            let verdict = stopping.observe(val_acc);
            if verdict == Check::Improved {
                best = Some(TrainState {
                    model: model.clone(),
                    adam: adam.clone(),
                    seed: cfg.seed,
                    iteration,
                    cursor: stream.cursor(),
                    stopping: stopping.clone(),
                    val_acc,
                    test_acc,
                    metrics_rows: metrics.len(),
                });
            }
            if verdict == Check::Stop {
                break StopReason::Patience;
            }
        }
        if at_cap {
            break StopReason::MaxIter;
        }
    };
    Ok(TrainOutcome {
        best: best.expect("the first check always improves"),
        metrics,
        losses,
        iterations: iteration,
        stop,
    })
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"TNCK";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    model: ModelConfig,
    seed: u64,
    rng: String,
    iteration: usize,
    cursor: (u64, usize),
    stopping: EarlyStopping,
    val_acc: f64,
    test_acc: f64,
    metrics_rows: usize,
    adam: AdamConfig,
    adam_step: u64,
    names: Vec<String>,
}

/// Writes `TNCK`, a JSON header, then parameters, Adam moments and
/// batch-norm running statistics as tensors.
pub fn save_checkpoint(path: &Path, s: &TrainState) -> Result<()> {
    let header = Header {
        version: CHECKPOINT_VERSION,
        model: s.model.config.clone(),
        seed: s.seed,
        rng: Rng::ALGORITHM.to_string(),
        iteration: s.iteration,
        cursor: s.cursor,
        stopping: s.stopping.clone(),
        val_acc: s.val_acc,
        test_acc: s.test_acc,
        metrics_rows: s.metrics_rows,
        adam: s.adam.cfg,
        adam_step: s.adam.step,
        names: s.model.names.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for t in s.model.params.iter().chain(&s.adam.m).chain(&s.adam.v) {
        write_tensor(&mut w, t)?;
    }
    for (m, v) in &s.model.running {
        write_tensor(&mut w, &Tensor::new(vec![m.len()], m.clone())?)?;
        write_tensor(&mut w, &Tensor::new(vec![v.len()], v.clone())?)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("{} is not a checkpoint", path.display())));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    let h: Header = serde_json::from_slice(&json).map_err(|e| Error::Format(e.to_string()))?;
    if h.version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("checkpoint version {}", h.version)));
    }
    let mut model = Model::<f32>::build(&h.model, &Rng::new(h.seed))?;
    if model.names != h.names {
        return Err(Error::Format("checkpoint parameters do not match the model".into()));
    }
    let n = model.params.len();
    let mut read = |want: &[usize]| -> Result<Tensor<f32>> {
        let t = read_tensor::<f32, _>(&mut r)?;
        if t.dims() != want {
            return Err(Error::Format(format!("stored tensor {:?}, expected {want:?}", t.dims())));
        }
        Ok(t)
    };
    let dims: Vec<Vec<usize>> = model.params.iter().map(|p| p.dims().to_vec()).collect();
    let params = dims.iter().map(|d| read(d)).collect::<Result<Vec<_>>>()?;
    let m = dims.iter().map(|d| read(d)).collect::<Result<Vec<_>>>()?;
    let v = dims.iter().map(|d| read(d)).collect::<Result<Vec<_>>>()?;
    for (rm, rv) in model.running.iter_mut() {
        *rm = read(&[rm.len()])?.into_data();
        *rv = read(&[rv.len()])?.into_data();
    }
    debug_assert_eq!(params.len(), n);
    model.params = params;
    Ok(TrainState {
        model,
        adam: Adam {
            cfg: h.adam,
            step: h.adam_step,
            m,
            v,
        },
        seed: h.seed,
        iteration: h.iteration,
        cursor: h.cursor,
        stopping: h.stopping,
        val_acc: h.val_acc,
        test_acc: h.test_acc,
        metrics_rows: h.metrics_rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patience_stops_on_the_tenth_flat_check() {
        let mut s = EarlyStopping::new(10);
        assert_eq!(s.observe(0.5), Check::Improved);
        for k in 1..10 {
            assert_eq!(s.observe(0.5), Check::Waiting(k));
        }
        assert_eq!(s.observe(0.4), Check::Stop);
    }

    #[test]
    fn improvement_resets_patience() {
        let mut s = EarlyStopping::new(3);
        s.observe(0.1);
        s.observe(0.1);
        s.observe(0.1);
        assert_eq!(s.observe(0.2), Check::Improved);
        assert_eq!(s.observe(0.2), Check::Waiting(1));
    }
}
