use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use tnlayers::init::Rng;
use tnlayers::layers::{forward, loglog_slope, multiply_count, ContractionGraph, ContractionOrder, LayerKind, LayerSpec};
use tnlayers::Tensor;

use crate::error::{io, CliError};

#[derive(Clone, Debug, Serialize)]
pub struct BenchRow {
    pub kind: String,
    pub n: usize,
    pub modes: usize,
    pub mode_dim: usize,
    pub bond_dim: usize,
    pub multiplies: u64,
    pub forward_us: f64,
}

fn median_us(g: &ContractionGraph<f32>, reps: usize) -> Result<f64, CliError> {
    let x = Tensor::ones(&[1, g.in_width()]);
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t = Instant::now();
        forward(g, &x)?;
        times.push(t.elapsed().as_secs_f64() * 1e6);
    }
    times.sort_by(f64::total_cmp);
    Ok(times[reps / 2])
}

/// Multiply counts and timings for `N = 2^4 .. 2^max_modes`.
pub fn sweep(max_modes: usize, tt_bond: usize, seed: u64) -> Result<Vec<BenchRow>, CliError> {
    let mut rows = Vec::new();
    for (kind, bond) in [
        (LayerKind::Dense, 1),
        (LayerKind::Tt, tt_bond),
        (LayerKind::Tree, 2),
        (LayerKind::Mera, 2),
    ] {
        for modes in 4..=max_modes {
            let spec = LayerSpec::new(kind, modes, 2, bond);
            let mut g = ContractionGraph::<f32>::build(&spec)?;
            g.init_gaussian(&Rng::new(seed), 0)?;
            let topo = g.topology();
            let multiplies = multiply_count(topo, &ContractionOrder::columnwise(topo))?;
            rows.push(BenchRow {
                kind: format!("{kind:?}").to_lowercase(),
                n: 1 << modes,
                modes,
                mode_dim: 2,
                bond_dim: bond,
                multiplies,
                forward_us: median_us(&g, 5)?,
            });
        }
    }
    Ok(rows)
}

pub fn slopes(rows: &[BenchRow]) -> Result<Vec<(String, f64, f64)>, CliError> {
    let mut kinds: Vec<String> = rows.iter().map(|r| r.kind.clone()).collect();
    kinds.dedup();
    kinds
        .into_iter()
        .map(|k| {
            let pick = |f: &dyn Fn(&BenchRow) -> f64| -> Vec<(f64, f64)> {
                rows.iter().filter(|r| r.kind == k).map(|r| (r.n as f64, f(r))).collect()
            };
            let counts = loglog_slope(&pick(&|r| r.multiplies as f64))?;
            let times = loglog_slope(&pick(&|r| r.forward_us.max(1e-3)))?;
            Ok((k, counts, times))
        })
        .collect()
}

pub fn run(out: &Path, max_modes: usize, tt_bond: usize, seed: u64) -> Result<(), CliError> {
    if !(5..=14).contains(&max_modes) {
        return Err(CliError::Config(format!("--max-modes {max_modes} outside 5..=14")));
    }
    let rows = sweep(max_modes, tt_bond, seed)?;
    println!("{:<6} {:>6} {:>3} {:>14} {:>12}", "kind", "N", "D", "multiplies", "forward us");
    for r in &rows {
        println!(
            "{:<6} {:>6} {:>3} {:>14} {:>12.1}",
            r.kind, r.n, r.bond_dim, r.multiplies, r.forward_us
        );
    }
    println!("\nlog-log slope against N");
    for (k, c, t) in slopes(&rows)? {
        println!("{k:<6} multiplies {c:.3}  wall time {t:.3}");
    }
    std::fs::create_dir_all(out).map_err(|e| io(out, e))?;
    let path = out.join("bench.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| io(&path, e))?;
    for r in &rows {
        w.serialize(r).map_err(|e| io(&path, e))?;
    }
    w.flush().map_err(|e| io(&path, e))?;
    Ok(())
}
