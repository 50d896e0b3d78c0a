//! Self-checks run by `tnlayers verify`.

use rand::{Rng as _, RngCore};
use serde::Serialize;

use crate::autodiff::{gradcheck, AdjointFault, BnStats, GradcheckReport, Tape, Var};
use crate::error::Result;
use crate::init::{random_orthogonal, Rng};
use crate::layers::{
    forward, multiply_count, to_dense, ContractionGraph, ContractionOrder, LayerKind, LayerSpec, Role,
    TopElement, DEFAULT_DENSE_CAP,
};
use crate::nn::{HeadKind, Mode, Model, ModelConfig};
use crate::tensor::{contract, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteResult {
    pub name: String,
    pub passed: bool,
    /// Largest error seen; its meaning depends on the suite.
    pub max_error: f64,
    pub tolerance: f64,
    pub checked: usize,
    pub detail: String,
}

impl SuiteResult {
    fn new(name: &str, max_error: f64, tolerance: f64, checked: usize, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed: max_error <= tolerance,
            max_error,
            tolerance,
            checked,
            detail,
        }
    }

    fn failed(name: &str, tolerance: f64, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed: false,
            max_error: f64::INFINITY,
            tolerance,
            checked: 0,
            detail,
        }
    }
}

fn wrap(name: &str, tolerance: f64, r: Result<SuiteResult>) -> SuiteResult {
    r.unwrap_or_else(|e| SuiteResult::failed(name, tolerance, e.to_string()))
}

fn uniform(dims: &[usize], rng: &mut impl RngCore) -> Tensor<f64> {
    Tensor::from_fn(dims, |_| rng.random_range(-1.0..1.0))
}

fn rel_err(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.max_abs_diff(b) / a.max_abs().max(b.max_abs()).max(1e-300)
}

/// `forward(g, x)` against `to_dense(g) x` on a random layer.
pub fn oracle_case(kind: LayerKind, n: usize, d: usize, bond: usize, seed: u64) -> Result<f64> {
    let spec = LayerSpec::new(kind, n, d, bond);
    let mut g = ContractionGraph::<f64>::build(&spec)?;
    let rng = Rng::new(seed);
    let mut r = rng.stream(0);
    for i in 0..g.tensors().len() {
        let dims = g.node(i).dims().to_vec();
        g.set_node(i, uniform(&dims, &mut r))?;
    }
    let x = uniform(&[3, g.in_width()], &mut r);
    let y = forward(&g, &x)?;
    let m = to_dense(&g, DEFAULT_DENSE_CAP)?;
    let oracle = contract(&x, &[1], &m, &[1])?;
    Ok(rel_err(&y, &oracle))
}

/// One entry per layer kind over `cases` random `(kind, d, D, n)` draws with
/// `d` in {2, 3}, `D` in {1, 2, 3}, `n` in {2, 4, 6, 8}.
pub fn oracle_equivalence(seed: u64, cases: usize) -> Vec<SuiteResult> {
    let kinds = [LayerKind::Dense, LayerKind::Tt, LayerKind::Tree, LayerKind::Mera];
    let mut worst: [(f64, usize, String); 4] = Default::default();
    let mut errors: Vec<String> = Vec::new();
    let mut r = Rng::new(seed).stream(1);
    for case in 0..cases {
        let k = r.random_range(0..4);
        let d = [2, 3][r.random_range(0..2)];
        let bond = r.random_range(1..=3);
        let n = [2, 4, 6, 8][r.random_range(0..4)];
        match oracle_case(kinds[k], n, d, bond, seed.wrapping_add(case as u64)) {
            Ok(e) => {
                let w = &mut worst[k];
                w.1 += 1;
                if e >= w.0 {
                    *w = (e, w.1, format!("worst at d={d} D={bond} n={n}"));
                }
            }
            Err(e) => errors.push(format!("{:?} d={d} D={bond} n={n}: {e}", kinds[k])),
        }
    }
    kinds
        .iter()
        .zip(worst)
        .map(|(kind, (err, count, detail))| {
            let name = format!("{}_oracle_equivalence", format!("{kind:?}").to_lowercase());
            let mine: Vec<&String> = errors.iter().filter(|e| e.starts_with(&format!("{kind:?} "))).collect();
            if mine.is_empty() {
                SuiteResult::new(&name, err, 1e-10, count, detail)
            } else {
                SuiteResult::failed(&name, 1e-10, format!("{mine:?}"))
            }
        })
        .collect()
}

/// MERA with identity disentanglers against the tree built from its tree
/// tensors; the error is the max abs difference of the dense matrices.
pub fn identity_reduction(seed: u64) -> SuiteResult {
    let run = || -> Result<SuiteResult> {
        let mut worst = 0.0f64;
        let mut checked = 0;
        for n in [4, 8, 12] {
            for top in [TopElement::Single, TopElement::Rank4] {
                let mut spec = LayerSpec::new(LayerKind::Mera, n, 2, 2);
                spec.top = top;
                let mut g = ContractionGraph::<f64>::build(&spec)?;
                g.init_orthogonal(&Rng::new(seed), 0)?;
                g.set_identity_disentanglers();
                let mut tspec = LayerSpec::new(LayerKind::Tree, n, 2, 2);
                tspec.top = top;
                let tensors = g
                    .tensors()
                    .iter()
                    .zip(&g.topology().nodes)
                    .filter(|(_, node)| node.role != Role::Disentangler)
                    .map(|(t, _)| t.clone())
                    .collect();
                let tree = ContractionGraph::from_tensors(tspec.topology()?, tensors)?;
                let a = to_dense(&g, DEFAULT_DENSE_CAP)?;
                let b = to_dense(&tree, DEFAULT_DENSE_CAP)?;
                worst = worst.max(a.max_abs_diff(&b));
                checked += 1;
            }
        }
        Ok(SuiteResult::new(
            "mera_identity_reduction",
            worst,
            0.0,
            checked,
            "n in {4, 8, 12}, both closing rules".into(),
        ))
    };
    wrap("mera_identity_reduction", 0.0, run())
}

/// `max |Q^T Q - I|` over `random_orthogonal(n)` for `n` in `1..=64`, and
/// over the dense matrix of an orthogonally initialized square MERA.
pub fn orthogonality(seed: u64, mera_modes: usize) -> Vec<SuiteResult> {
    let rng = Rng::new(seed);
    let matrices = wrap(
        "random_orthogonal",
        1e-6,
        (|| {
            let mut worst = 0.0f64;
            for n in 1..=64 {
                let q = random_orthogonal(n, &mut rng.stream(n as u64))?;
                let qtq = contract(&q, &[0], &q, &[0])?;
                worst = worst.max(qtq.max_abs_diff(&Tensor::eye(n)));
            }
            Ok(SuiteResult::new("random_orthogonal", worst, 1e-6, 64, "n = 1..64".into()))
        })(),
    );
    let layer = wrap(
        "orthogonal_mera_layer",
        1e-6,
        (|| {
            let mut g = ContractionGraph::<f64>::build(&LayerSpec::new(LayerKind::Mera, mera_modes, 2, 2))?;
            g.init_orthogonal(&rng, 0)?;
            let m = to_dense(&g, DEFAULT_DENSE_CAP)?;
            let mtm = contract(&m, &[0], &m, &[0])?;
            let err = mtm.max_abs_diff(&Tensor::eye(m.dims()[1]));
            Ok(SuiteResult::new(
                "orthogonal_mera_layer",
                err,
                1e-6,
                1,
                format!("n = {mera_modes}, width {}", m.dims()[1]),
            ))
        })(),
    );
    vec![matrices, layer]
}

fn report(name: &str, tolerance: f64, r: Result<GradcheckReport>) -> SuiteResult {
    match r {
        Ok(rep) => {
            let kink = rep
                .min_kink_distance
                .map(|k| format!(", nearest kink {k:.2e}"))
                .unwrap_or_default();
            SuiteResult::new(
                name,
                rep.max_rel_error,
                tolerance,
                rep.checked,
                format!("worst {:?}{kink}", rep.worst),
            )
        }
        Err(e) => SuiteResult::failed(name, tolerance, e.to_string()),
    }
}

type Primitive = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

/// Central-difference checks (`eps = 1e-5`, fp64) of every differentiable
/// primitive. Each loss is a random weighting of the op's output.
pub fn gradcheck_primitives(seed: u64, fault: Option<AdjointFault>) -> Vec<SuiteResult> {
    let rng = Rng::new(seed);
    let mut r = rng.stream(2);
    let mut cases: Vec<(&str, f64, Vec<Tensor<f64>>, Primitive)> = Vec::new();

    fn weighted(t: &mut Tape<f64>, y: Var, w: &Tensor<f64>) -> Result<Var> {
        let wv = t.constant(w.clone());
        let p = t.mul(y, wv)?;
        Ok(t.sum(p))
    }

    let w = uniform(&[3, 2], &mut r);
    cases.push((
        "contract",
        1e-5,
        vec![uniform(&[3, 4], &mut r), uniform(&[4, 2], &mut r)],
        Box::new(move |t, p| {
            let y = t.contract(p[0], &[1], p[1], &[0])?;
            weighted(t, y, &w)
        }),
    ));
    let w = uniform(&[4, 2, 3], &mut r);
    cases.push((
        "permute_reshape",
        1e-5,
        vec![uniform(&[2, 3, 4], &mut r)],
        Box::new(move |t, p| {
            let y = t.permute(p[0], &[2, 0, 1])?;
            let y = t.reshape(y, &[4, 6])?;
            let y = t.reshape(y, &[4, 2, 3])?;
            weighted(t, y, &w)
        }),
    ));
    let w = uniform(&[5], &mut r);
    cases.push((
        "add_mul_scale",
        1e-5,
        vec![uniform(&[5], &mut r), uniform(&[5], &mut r)],
        Box::new(move |t, p| {
            let a = t.add(p[0], p[1])?;
            let m = t.mul(a, p[1])?;
            let s = t.scale(m, 0.7);
            weighted(t, s, &w)
        }),
    ));
    let w = uniform(&[1, 4, 4, 2], &mut r);
    cases.push((
        "conv2d",
        1e-6,
        vec![uniform(&[1, 4, 4, 1], &mut r), uniform(&[3, 3, 1, 2], &mut r)],
        Box::new(move |t, p| {
            let y = t.conv2d(p[0], p[1])?;
            weighted(t, y, &w)
        }),
    ));
    let w = uniform(&[2, 3, 3, 2], &mut r);
    cases.push((
        "max_pool",
        1e-5,
        vec![uniform(&[2, 6, 5, 2], &mut r)],
        Box::new(move |t, p| {
            let y = t.max_pool(p[0], 3, 2)?;
            weighted(t, y, &w)
        }),
    ));
    let w = uniform(&[12], &mut r);
    let x: Tensor<f64> = uniform(&[12], &mut r).map(|v| if v.abs() < 0.1 { v + 0.2 } else { v });
    cases.push((
        "leaky_relu",
        1e-5,
        vec![x],
        Box::new(move |t, p| {
            let y = t.leaky_relu(p[0], 0.2);
            weighted(t, y, &w)
        }),
    ));
    let w = uniform(&[10], &mut r);
    let mask = Tensor::from_fn(&[10], |i| if i[0] % 3 == 0 { 0.0 } else { 2.0 });
    cases.push((
        "dropout",
        1e-5,
        vec![uniform(&[10], &mut r)],
        Box::new(move |t, p| {
            let y = t.dropout(p[0], mask.clone())?;
            weighted(t, y, &w)
        }),
    ));
    let w = uniform(&[4, 2, 2, 3], &mut r);
    cases.push((
        "batch_norm_train",
        1e-5,
        vec![uniform(&[4, 2, 2, 3], &mut r), uniform(&[3], &mut r), uniform(&[3], &mut r)],
        Box::new(move |t, p| {
            let (y, _) = t.batch_norm(p[0], p[1], p[2], BnStats::Batch)?;
            weighted(t, y, &w)
        }),
    ));
    let w = uniform(&[5, 3], &mut r);
    cases.push((
        "batch_norm_eval",
        1e-5,
        vec![uniform(&[5, 3], &mut r), uniform(&[3], &mut r), uniform(&[3], &mut r)],
        Box::new(move |t, p| {
            let stats = BnStats::Running {
                mean: vec![0.1, -0.2, 0.3],
                var: vec![0.5, 1.5, 2.0],
            };
            let (y, _) = t.batch_norm(p[0], p[1], p[2], stats)?;
            weighted(t, y, &w)
        }),
    ));
    cases.push((
        "softmax_xent",
        1e-5,
        vec![uniform(&[4, 5], &mut r)],
        Box::new(|t, p| t.softmax_xent(p[0], &[0, 3, 4, 1])),
    ));

    cases
        .into_iter()
        .map(|(name, tol, params, f)| {
            let r = gradcheck(
                |t, p| {
                    if let Some(fault) = fault {
                        t.inject_fault(fault);
                    }
                    f(t, p)
                },
                &params,
                1e-5,
            );
            report(&format!("gradcheck_{name}"), tol, r)
        })
        .collect()
}

/// A model small enough to gradcheck end to end: 16x16x1 inputs, 2-4
/// channels, 16 head inputs, 4 head outputs, 3 classes.
pub fn tiny_model_config(head: HeadKind) -> ModelConfig {
    ModelConfig {
        input: [16, 16, 1],
        conv_channels: vec![2, 2, 2, 2, 2, 4],
        head,
        fc2_width: 3,
        head_in: 16,
        head_out: 4,
        classes: 3,
        ..ModelConfig::default()
    }
}

/// Full-model gradient check for one head kind, in train mode with fixed
/// dropout masks. Starting from `seed`, the first draw whose leaky-ReLU
/// inputs all sit at least `1e-4` from the kink is used.
pub fn gradcheck_model(head: HeadKind, seed: u64, fault: Option<AdjointFault>) -> SuiteResult {
    let name = format!("gradcheck_model_{}", head.name());
    let cfg = tiny_model_config(head);
    let labels = [0usize, 2, 1, 1];
    let mut chosen = None;
    for s in seed..seed + 50 {
        let attempt = (|| -> Result<Option<(Model<f64>, Tensor<f64>)>> {
            let model = Model::<f64>::build(&cfg, &Rng::new(s))?;
            let x = uniform(&[4, 16, 16, 1], &mut Rng::new(s).stream(7));
            let mut tape = Tape::new();
            let p = model.record_params(&mut tape);
            let xv = tape.constant(x.clone());
            model.forward(&mut tape, &p, xv, Mode::Train, &mut Rng::new(s).stream(8))?;
            Ok((tape.min_kink_distance().unwrap_or(f64::INFINITY) >= 1e-4).then_some((model, x)))
        })();
        match attempt {
            Ok(Some(found)) => {
                chosen = Some((s, found));
                break;
            }
            Ok(None) => continue,
            Err(e) => return SuiteResult::failed(&name, 1e-4, e.to_string()),
        }
    }
    let Some((s, (model, x))) = chosen else {
        return SuiteResult::failed(&name, 1e-4, "no draw kept clear of the leaky-ReLU kink".into());
    };
    let r = gradcheck(
        |t, p| {
            if let Some(fault) = fault {
                t.inject_fault(fault);
            }
            let xv = t.constant(x.clone());
            let f = model.forward(t, p, xv, Mode::Train, &mut Rng::new(s).stream(8))?;
            t.softmax_xent(f.logits, &labels)
        },
        &model.params,
        1e-5,
    );
    let mut out = report(&name, 1e-4, r);
    out.detail = format!("seed {s}, {}", out.detail);
    out
}

/// Parameter counts of the default heads and multiply-count scaling fits.
pub fn counts() -> Vec<SuiteResult> {
    let run = || -> Result<Vec<SuiteResult>> {
        let mera = LayerSpec::new(LayerKind::Mera, 12, 2, 2).topology()?.param_count();
        let tt = LayerSpec::new(LayerKind::Tt, 12, 2, 3).topology()?.param_count();
        let mut out = vec![
            SuiteResult::new("mera_param_count", (mera as f64 - 320.0).abs(), 0.0, 1, format!("{mera}")),
            SuiteResult::new("tt_param_count", (tt as f64 - 384.0).abs(), 0.0, 1, format!("{tt}")),
        ];
        let mut consistent = 0.0f64;
        for kind in [LayerKind::Dense, LayerKind::Tt, LayerKind::Tree, LayerKind::Mera] {
            let g = ContractionGraph::<f64>::build(&LayerSpec::new(kind, 6, 2, 2))?;
            let mut tape = Tape::new();
            for (i, t) in g.tensors().iter().enumerate() {
                tape.param(i, t.clone());
            }
            let topo = g.topology();
            consistent = consistent.max((topo.param_count() as f64 - tape.trainable_scalars() as f64).abs());
            let analytic = multiply_count(topo, &ContractionOrder::columnwise(topo))?;
            let (_, counted) =
                crate::tensor::count_multiplications(|| forward(&g, &Tensor::ones(&[1, g.in_width()])));
            consistent = consistent.max((analytic as f64 - counted as f64).abs());
        }
        out.push(SuiteResult::new(
            "count_consistency",
            consistent,
            0.0,
            4,
            "param_count vs tape scalars, analytic vs instrumented multiplies".into(),
        ));
        Ok(out)
    };
    run().unwrap_or_else(|e| vec![SuiteResult::failed("counts", 0.0, e.to_string())])
}

/// Every suite. `fault` corrupts the contract adjoint in the gradient checks.
pub fn run_all(seed: u64, fault: Option<AdjointFault>) -> Vec<SuiteResult> {
    let mut out = oracle_equivalence(seed, 100);
    out.push(identity_reduction(seed));
    out.extend(orthogonality(seed, 12));
    out.extend(gradcheck_primitives(seed, fault));
    for head in HeadKind::ALL {
        out.push(gradcheck_model(head, seed, fault));
    }
    out.extend(counts());
    out
}
