use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::activation::{dropout_mask, Mode, LEAK};
use crate::autodiff::{BnStats, Tape, Var};
use crate::error::{Error, Result};
use crate::init::{init_gaussian_fanin, Rng};
use crate::layers::{
    fix_outputs, forward_tape, plan, ContractionGraph, ContractionOrder, LayerKind, LayerSpec, Plan,
    TopElement,
};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Fc1,
    Fc2,
    Mera,
    Tt,
}

impl HeadKind {
    pub const ALL: [HeadKind; 4] = [HeadKind::Fc1, HeadKind::Fc2, HeadKind::Mera, HeadKind::Tt];

    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Fc1 => "fc1",
            HeadKind::Fc2 => "fc2",
            HeadKind::Mera => "mera",
            HeadKind::Tt => "tt",
        }
    }
}

impl std::str::FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        HeadKind::ALL
            .into_iter()
            .find(|h| h.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown head kind {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropoutConfig {
    /// After the fifth convolution.
    pub conv5: f64,
    /// After the sixth convolution.
    pub conv6: f64,
    /// On the inputs of both head layers.
    pub head: f64,
}

impl Default for DropoutConfig {
    fn default() -> Self {
        Self {
            conv5: 0.2,
            conv6: 0.5,
            head: 0.5,
        }
    }
}

impl DropoutConfig {
    pub fn off() -> Self {
        Self {
            conv5: 0.0,
            conv6: 0.0,
            head: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Input image `(height, width, channels)`.
    pub input: [usize; 3],
    /// Output channels of the six convolutions.
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    pub pool_window: usize,
    pub pool_stride: usize,
    pub head: HeadKind,
    /// Width `x` of the first head layer for `fc2`.
    pub fc2_width: usize,
    /// Features the head expects from the flattened conv stack.
    pub head_in: usize,
    pub head_out: usize,
    pub classes: usize,
    pub mode_dim: usize,
    pub mera_bond: usize,
    pub tt_bond: usize,
    pub mera_top: TopElement,
    /// Leaky ReLU on the whole state after each tree column inside MERA/tree heads.
    pub mid_activation: bool,
    pub identity_disentanglers: bool,
    pub dropout: DropoutConfig,
    pub leak: f64,
    pub batch_norm: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input: [32, 32, 3],
            conv_channels: vec![64, 64, 64, 64, 64, 256],
            kernel: 3,
            pool_window: 3,
            pool_stride: 2,
            head: HeadKind::Mera,
            fc2_width: 5,
            head_in: 4096,
            head_out: 64,
            classes: 10,
            mode_dim: 2,
            mera_bond: 2,
            tt_bond: 3,
            mera_top: TopElement::Single,
            mid_activation: false,
            identity_disentanglers: false,
            dropout: DropoutConfig::default(),
            leak: LEAK,
            batch_norm: true,
        }
    }
}

impl ModelConfig {
    pub fn with_head(head: HeadKind, classes: usize) -> Self {
        Self {
            head,
            classes,
            ..Self::default()
        }
    }

    /// Narrow conv stack (16/16/64 channels) for CPU runs.
    pub fn desk(head: HeadKind, classes: usize) -> Self {
        Self {
            conv_channels: vec![16, 16, 16, 16, 16, 64],
            head_in: 1024,
            ..Self::with_head(head, classes)
        }
    }

    fn pooled(&self, side: usize) -> usize {
        let mut s = side;
        for _ in 0..3 {
            s = s.div_ceil(self.pool_stride);
        }
        s
    }

    /// Width of the flattened conv output for the configured input.
    pub fn flatten_width(&self) -> usize {
        let last = self.conv_channels.last().copied().unwrap_or(0);
        self.pooled(self.input[0]) * self.pooled(self.input[1]) * last
    }

    fn required_side(&self) -> Option<usize> {
        let last = *self.conv_channels.last()?;
        if last == 0 || !self.head_in.is_multiple_of(last) {
            return None;
        }
        let cells = self.head_in / last;
        let side = (cells as f64).sqrt().round() as usize;
        (side * side == cells).then_some(side * self.pool_stride.pow(3))
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_channels.len() != 6 || self.conv_channels.contains(&0) {
            return Err(Error::Config("the conv stack needs six positive channel counts".into()));
        }
        if self.kernel.is_multiple_of(2) || self.pool_window == 0 || self.pool_stride == 0 {
            return Err(Error::Config("kernel must be odd and pooling positive".into()));
        }
        if self.classes < 2 || self.head_out == 0 {
            return Err(Error::Config("need at least two classes and a nonempty head".into()));
        }
        for p in [self.dropout.conv5, self.dropout.conv6, self.dropout.head] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
            }
        }
        let flat = self.flatten_width();
        if flat != self.head_in {
            let hint = match self.required_side() {
                Some(s) => format!("; the head needs a {s}x{s} input (any side that pools to {})", s / self.pool_stride.pow(3)),
                None => String::new(),
            };
            return Err(Error::Config(format!(
                "a {}x{}x{} input gives {flat} features after the conv stack, the head expects {}{hint}",
                self.input[0], self.input[1], self.input[2], self.head_in
            )));
        }
        if self.head == HeadKind::Fc2 && self.fc2_width == 0 {
            return Err(Error::Config("fc2 width must be positive".into()));
        }
        if matches!(self.head, HeadKind::Mera | HeadKind::Tt) {
            self.head_specs()?;
        }
        Ok(())
    }

    fn modes(&self, width: usize) -> Result<usize> {
        let mut n = 0;
        let mut w = 1;
        while w < width {
            w *= self.mode_dim;
            n += 1;
        }
        if w != width {
            return Err(Error::Config(format!(
                "factorized heads need widths that are powers of {}, got {width}",
                self.mode_dim
            )));
        }
        Ok(n)
    }

    /// Layer specs of a factorized head: a square layer, then one that narrows
    /// to `head_out` by fixing outputs.
    pub fn head_specs(&self) -> Result<(LayerSpec, LayerSpec, usize)> {
        let (kind, bond) = match self.head {
            HeadKind::Mera => (LayerKind::Mera, self.mera_bond),
            HeadKind::Tt => (LayerKind::Tt, self.tt_bond),
            other => return Err(Error::Config(format!("{} is not a factorized head", other.name()))),
        };
        let n = self.modes(self.head_in)?;
        let m = self.modes(self.head_out)?;
        if m > n {
            return Err(Error::Config("head output wider than its input".into()));
        }
        let mut spec = LayerSpec::new(kind, n, self.mode_dim, bond);
        spec.top = self.mera_top;
        spec.validate()?;
        Ok((spec.clone(), spec, n - m))
    }
}

/// Parameter totals without building the model; batch norm is excluded.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub conv: usize,
    /// Both head layers plus the classifier.
    pub head: usize,
}

impl ParamCounts {
    pub fn total(&self) -> usize {
        self.conv + self.head
    }
}

impl ModelConfig {
    pub fn param_counts(&self) -> Result<ParamCounts> {
        self.validate()?;
        let k2 = self.kernel * self.kernel;
        let mut cin = self.input[2];
        let mut conv = 0;
        for &c in &self.conv_channels {
            conv += k2 * cin * c;
            cin = c;
        }
        let classifier = self.head_out * self.classes;
        let head = match self.head {
            HeadKind::Fc1 => self.head_in * self.head_in + self.head_in * self.head_out,
            HeadKind::Fc2 => self.head_in * self.fc2_width + self.fc2_width * self.head_out,
            HeadKind::Mera | HeadKind::Tt => {
                let (s1, s2, fixed) = self.head_specs()?;
                let t1 = s1.topology()?;
                let mut t2 = s2.topology()?;
                for leg in t2.fixable_outputs().into_iter().take(fixed) {
                    t2.fix_output(leg, 0)?;
                }
                t1.param_count() + t2.param_count()
            }
        };
        Ok(ParamCounts {
            conv,
            head: head + classifier,
        })
    }
}

/// Where each parameter tensor sits and what it is.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamRole {
    Conv(usize),
    BnGamma(usize),
    BnBeta(usize),
    /// Dense head weight `(in, out)`, or the classifier.
    Dense,
    Node,
}

#[derive(Clone, Debug)]
enum Head {
    Dense { w1: usize, w2: usize },
    Graph { g1: Graph, g2: Graph },
}

#[derive(Clone, Debug)]
struct Graph {
    first: usize,
    count: usize,
    plan: Plan,
}

/// Convolutional feature extractor, two-layer head and classifier.
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: Vec<Tensor<T>>,
    pub names: Vec<String>,
    pub roles: Vec<ParamRole>,
    /// Running `(mean, var)` per batch-norm layer.
    pub running: Vec<(Vec<T>, Vec<T>)>,
    conv: [usize; 6],
    bn: Vec<(usize, usize)>,
    head: Head,
    classifier: usize,
}

/// Tape handles for a recorded forward pass.
pub struct Forward {
    pub logits: Var,
    /// Batch statistics per batch-norm layer (train mode only).
    pub stats: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

struct Builder<T> {
    params: Vec<Tensor<T>>,
    names: Vec<String>,
    roles: Vec<ParamRole>,
}

impl<T: Scalar> Builder<T> {
    fn push(&mut self, name: String, role: ParamRole, t: Tensor<T>) -> usize {
        self.params.push(t);
        self.names.push(name);
        self.roles.push(role);
        self.params.len() - 1
    }
}

const GRAPH_STREAMS: u64 = 1 << 16;

impl<T: Scalar> Model<T> {
    pub fn build(config: &ModelConfig, rng: &Rng) -> Result<Self> {
        config.validate()?;
        let mut b = Builder {
            params: Vec::new(),
            names: Vec::new(),
            roles: Vec::new(),
        };
        let k = config.kernel;
        let mut cin = config.input[2];
        let mut conv = [0; 6];
        for (i, &cout) in config.conv_channels.iter().enumerate() {
            let t = init_gaussian_fanin(&[k, k, cin, cout], k * k * cin, &mut rng.stream(i as u64))?;
            conv[i] = b.push(format!("conv{}", i + 1), ParamRole::Conv(i), t);
            cin = cout;
        }
        let mut bn_widths: Vec<usize> = config.conv_channels.clone();
        let (head_w1, head_w2) = match config.head {
            HeadKind::Fc1 => (config.head_in, config.head_out),
            HeadKind::Fc2 => (config.fc2_width, config.head_out),
            _ => (config.head_in, config.head_out),
        };
        bn_widths.extend([head_w1, head_w2]);
        let mut bn = Vec::new();
        if config.batch_norm {
            for (j, &w) in bn_widths.iter().enumerate() {
                let g = b.push(format!("bn{}.gamma", j + 1), ParamRole::BnGamma(j), Tensor::ones(&[w]));
                let be = b.push(format!("bn{}.beta", j + 1), ParamRole::BnBeta(j), Tensor::zeros(&[w]));
                bn.push((g, be));
            }
        }
        let running = bn
            .iter()
            .map(|&(g, _)| {
                let w = b.params[g].len();
                (vec![T::zero(); w], vec![T::one(); w])
            })
            .collect();

        let mut stream = 6u64;
        let mut dense = |b: &mut Builder<T>, name: &str, i: usize, o: usize| -> Result<usize> {
            let t = init_gaussian_fanin(&[i, o], i, &mut rng.stream(stream))?;
            stream += 1;
            Ok(b.push(name.to_string(), ParamRole::Dense, t))
        };
        let head = match config.head {
            HeadKind::Fc1 | HeadKind::Fc2 => {
                let w1 = dense(&mut b, "head1", config.head_in, head_w1)?;
                let w2 = dense(&mut b, "head2", head_w1, head_w2)?;
                Head::Dense { w1, w2 }
            }
            HeadKind::Mera | HeadKind::Tt => {
                let (s1, s2, fixed) = config.head_specs()?;
                let mut g1 = ContractionGraph::<f64>::build(&s1)?;
                g1.init_orthogonal_with(rng, GRAPH_STREAMS, config.identity_disentanglers)?;
                let mut g2 = ContractionGraph::<f64>::build(&s2)?;
                g2.init_orthogonal_with(rng, 2 * GRAPH_STREAMS, config.identity_disentanglers)?;
                let picks: Vec<_> = g2.topology().fixable_outputs().into_iter().take(fixed).collect();
                if picks.len() < fixed {
                    return Err(Error::Config(format!(
                        "narrowing to {} outputs needs {fixed} fixable legs, the layer has {}",
                        config.head_out,
                        picks.len()
                    )));
                }
                let g2 = fix_outputs(g2, &picks)?;
                let mut add = |g: &ContractionGraph<f64>, name: &str| -> Result<Graph> {
                    let first = b.params.len();
                    for (i, t) in g.tensors().iter().enumerate() {
                        b.push(format!("{name}.node{i}"), ParamRole::Node, t.cast());
                    }
                    let topo = g.topology();
                    Ok(Graph {
                        first,
                        count: g.tensors().len(),
                        plan: plan(topo, &ContractionOrder::columnwise(topo))?,
                    })
                };
                let g1 = add(&g1, "head1")?;
                let g2 = add(&g2, "head2")?;
                Head::Graph { g1, g2 }
            }
        };
        let classifier = dense(&mut b, "classifier", head_w2, config.classes)?;
        Ok(Self {
            config: config.clone(),
            params: b.params,
            names: b.names,
            roles: b.roles,
            running,
            conv,
            bn,
            head,
            classifier,
        })
    }

    fn is_bn(&self, i: usize) -> bool {
        matches!(self.roles[i], ParamRole::BnGamma(_) | ParamRole::BnBeta(_))
    }

    /// Trainable weights, batch-norm affine parameters excluded.
    pub fn param_count(&self) -> usize {
        (0..self.params.len())
            .filter(|&i| !self.is_bn(i))
            .map(|i| self.params[i].len())
            .sum()
    }

    pub fn conv_param_count(&self) -> usize {
        self.conv.iter().map(|&i| self.params[i].len()).sum()
    }

    /// Both head layers plus the classifier.
    pub fn head_param_count(&self) -> usize {
        self.param_count() - self.conv_param_count()
    }

    pub fn bn_param_count(&self) -> usize {
        (0..self.params.len())
            .filter(|&i| self.is_bn(i))
            .map(|i| self.params[i].len())
            .sum()
    }

    /// Head layer graphs rebuilt from the current parameters.
    pub fn head_graphs(&self) -> Result<Option<(ContractionGraph<T>, ContractionGraph<T>)>> {
        let Head::Graph { g1, g2 } = &self.head else {
            return Ok(None);
        };
        let (s1, s2, fixed) = self.config.head_specs()?;
        let t1 = ContractionGraph::<T>::build(&s1)?;
        let g1t = ContractionGraph::from_tensors(
            t1.topology().clone(),
            self.params[g1.first..g1.first + g1.count].to_vec(),
        )?;
        let mut t2 = ContractionGraph::<T>::build(&s2)?;
        let picks: Vec<_> = t2.topology().fixable_outputs().into_iter().take(fixed).collect();
        t2 = fix_outputs(t2, &picks)?;
        let g2t = ContractionGraph::from_tensors(
            t2.topology().clone(),
            self.params[g2.first..g2.first + g2.count].to_vec(),
        )?;
        Ok(Some((g1t, g2t)))
    }

    /// Records every parameter on `tape` with its index as id.
    pub fn record_params(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.params
            .iter()
            .enumerate()
            .map(|(i, p)| tape.param(i, p.clone()))
            .collect()
    }

    /// Records the network on `tape` for an NHWC batch `x`. Train mode draws
    /// dropout masks from `rng` and normalizes with batch statistics; eval mode
    /// uses the running statistics.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        p: &[Var],
        x: Var,
        mode: Mode,
        rng: &mut impl RngCore,
    ) -> Result<Forward> {
        let cfg = &self.config;
        let leak = T::of(cfg.leak);
        let batch = tape.value(x).dims()[0];
        let mut stats = Vec::new();
        let mut bn_layer = 0usize;
        let mut norm_act = |tape: &mut Tape<T>, h: Var, stats: &mut Vec<_>| -> Result<Var> {
            let h = if cfg.batch_norm {
                let (g, b) = self.bn[bn_layer];
                let s = match mode {
                    Mode::Train => BnStats::Batch,
                    Mode::Eval => {
                        let (m, v) = &self.running[bn_layer];
                        BnStats::Running {
                            mean: m.clone(),
                            var: v.clone(),
                        }
                    }
                };
                let (y, moments) = tape.batch_norm(h, p[g], p[b], s)?;
                stats.push(moments.map(|(m, v)| {
                    (
                        m.iter().map(|a| a.to_f64().unwrap_or(f64::NAN)).collect(),
                        v.iter().map(|a| a.to_f64().unwrap_or(f64::NAN)).collect(),
                    )
                }));
                y
            } else {
                h
            };
            bn_layer += 1;
            Ok(tape.leaky_relu(h, leak))
        };
        let dropout = |tape: &mut Tape<T>, h: Var, prob: f64, mut rng: &mut dyn RngCore| -> Result<Var> {
            let dims = tape.value(h).dims().to_vec();
            match dropout_mask::<T>(&dims, prob, mode, &mut rng)? {
                Some(mask) => tape.dropout(h, mask),
                None => Ok(h),
            }
        };

        let mut h = x;
        for i in 0..6 {
            h = tape.conv2d(h, p[self.conv[i]])?;
            if i == 4 {
                h = dropout(tape, h, cfg.dropout.conv5, rng)?;
            }
            if i == 5 {
                h = dropout(tape, h, cfg.dropout.conv6, rng)?;
            }
            if i % 2 == 1 {
                h = tape.max_pool(h, cfg.pool_window, cfg.pool_stride)?;
            }
            h = norm_act(tape, h, &mut stats)?;
        }
        h = tape.reshape(h, &[batch, cfg.head_in])?;

        let mid = cfg.mid_activation.then_some(leak);
        for layer in 0..2 {
            h = dropout(tape, h, cfg.dropout.head, rng)?;
            h = match &self.head {
                Head::Dense { w1, w2 } => {
                    let w = if layer == 0 { *w1 } else { *w2 };
                    tape.contract(h, &[1], p[w], &[0])?
                }
                Head::Graph { g1, g2 } => {
                    let g = if layer == 0 { g1 } else { g2 };
                    forward_tape(tape, &g.plan, h, &p[g.first..g.first + g.count], mid)?
                }
            };
            h = norm_act(tape, h, &mut stats)?;
        }
        let logits = tape.contract(h, &[1], p[self.classifier], &[0])?;
        Ok(Forward { logits, stats })
    }

    /// Folds batch statistics into the running averages.
    pub fn update_running(&mut self, stats: &[Option<(Vec<f64>, Vec<f64>)>]) {
        for ((m, v), s) in self.running.iter_mut().zip(stats) {
            if let Some((bm, bv)) = s {
                let bm: Vec<T> = bm.iter().map(|&a| T::of(a)).collect();
                let bv: Vec<T> = bv.iter().map(|&a| T::of(a)).collect();
                super::norm::update_running(m, &bm);
                super::norm::update_running(v, &bv);
            }
        }
    }

    /// Eval-mode logits for an NHWC batch.
    pub fn predict(&self, x: Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let p: Vec<Var> = self.params.iter().map(|t| tape.constant(t.clone())).collect();
        let xv = tape.constant(x);
        let mut unused = Rng::new(0).stream(0);
        let f = self.forward(&mut tape, &p, xv, Mode::Eval, &mut unused)?;
        Ok(tape.value(f.logits).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count(head: HeadKind, classes: usize, fc2_width: usize) -> (usize, usize, usize) {
        let mut cfg = ModelConfig::with_head(head, classes);
        cfg.fc2_width = fc2_width;
        let m = Model::<f32>::build(&cfg, &Rng::new(0)).unwrap();
        let analytic = cfg.param_counts().unwrap();
        assert_eq!((analytic.head, analytic.conv), (m.head_param_count(), m.conv_param_count()));
        (m.head_param_count(), m.param_count(), m.conv_param_count())
    }

    #[test]
    fn dense_head_counts() {
        assert_eq!(count(HeadKind::Fc1, 10, 5), (17_040_000, 17_336_640, 296_640));
        assert_eq!(count(HeadKind::Fc2, 10, 5), (21_440, 318_080, 296_640));
        assert_eq!(count(HeadKind::Fc1, 100, 5).0, 17_045_760);
        assert_eq!(count(HeadKind::Fc2, 100, 10), (48_000, 344_640, 296_640));
    }

    #[test]
    fn factorized_head_counts() {
        assert_eq!(count(HeadKind::Mera, 10, 5).0, 320 + 272 + 640);
        assert_eq!(count(HeadKind::Tt, 10, 5).0, 384 + 288 + 640);
    }

    #[test]
    fn wrong_input_size_names_the_required_one() {
        let mut cfg = ModelConfig {
            input: [40, 40, 3],
            ..ModelConfig::default()
        };
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("32x32"), "{err}");
        cfg.input = [28, 28, 1];
        cfg.validate().unwrap();
    }

    #[test]
    fn desk_config_is_consistent() {
        for head in HeadKind::ALL {
            ModelConfig::desk(head, 10).validate().unwrap();
        }
    }
}
