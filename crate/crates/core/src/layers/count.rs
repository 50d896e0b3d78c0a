use super::eval::{plan, ContractionOrder};
use super::topology::Topology;
use crate::error::{Error, Result};

/// Scalars stored in the layer's nodes; fixed legs count as size 1.
pub fn param_count(topo: &Topology) -> usize {
    topo.param_count()
}

/// Scalar multiplications needed to apply the layer to one input vector when
/// nodes are absorbed in `order`. Absorbing a node with in-volume `p` and
/// out-volume `q` into a state of `S` entries costs `(S / p) * p * q`.
pub fn multiply_count(topo: &Topology, order: &ContractionOrder) -> Result<u64> {
    let p = plan(topo, order)?;
    Ok(p.steps
        .iter()
        .map(|s| s.state_len as u64 * s.out_volume as u64)
        .sum())
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::Shape("slope fit needs at least two points".into()));
    }
    if points.iter().any(|&(x, y)| x <= 0.0 || y <= 0.0) {
        return Err(Error::Shape("log-log fit needs positive values".into()));
    }
    let n = points.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = points.iter().map(|&(x, y)| (x.ln(), y.ln())).unzip();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Shape("slope fit needs distinct x values".into()));
    }
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{LayerKind, LayerSpec};

    #[test]
    fn dense_costs_n_squared() {
        let t = LayerSpec::new(LayerKind::Dense, 6, 2, 1).topology().unwrap();
        assert_eq!(multiply_count(&t, &ContractionOrder::columnwise(&t)).unwrap(), 64 * 64);
    }

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(f64, f64)> = (1..8).map(|k| (k as f64, 3.0 * (k as f64).powf(1.5))).collect();
        assert!((loglog_slope(&pts).unwrap() - 1.5).abs() < 1e-12);
        assert!(loglog_slope(&pts[..1]).is_err());
    }
}
