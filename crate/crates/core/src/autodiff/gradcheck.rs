use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    /// Max over scalars of `|analytic - central| / max(|analytic|, |central|, 1e-12)`.
    pub max_rel_error: f64,
    /// `(param, element)` where the max was attained.
    pub worst: Option<(usize, usize)>,
    /// Number of scalars compared.
    pub checked: usize,
    /// Smallest distance of a leaky-ReLU input from its kink at the base point.
    pub min_kink_distance: Option<f64>,
}

fn evaluate<F>(f: &F, params: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params
        .iter()
        .enumerate()
        .map(|(i, p)| tape.param(i, p.clone()))
        .collect();
    let root = f(&mut tape, &vars)?;
    let v = tape.value(root);
    if v.len() != 1 {
        return Err(Error::NonScalarRoot(v.dims().to_vec()));
    }
    Ok(v.data()[0])
}

/// Compares reverse-mode gradients of the scalar `f` against central
/// differences with step `eps`, in fp64. Parameter `i` is recorded with id `i`.
pub fn gradcheck<F>(f: F, params: &[Tensor<f64>], eps: f64) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Config(format!("gradcheck step {eps} outside [1e-7, 1e-3]")));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = params
        .iter()
        .enumerate()
        .map(|(i, p)| tape.param(i, p.clone()))
        .collect();
    let root = f(&mut tape, &vars)?;
    let grads = tape.backward(root, 1.0)?;
    let min_kink_distance = tape.min_kink_distance();

    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        min_kink_distance,
    };
    let mut work = params.to_vec();
    for i in 0..params.len() {
        let analytic = grads.get(i).expect("every trainable parameter has a gradient");
        for j in 0..params[i].len() {
            let base = params[i].data()[j];
            work[i].data_mut()[j] = base + eps;
            let fp = evaluate(&f, &work)?;
            work[i].data_mut()[j] = base - eps;
            let fm = evaluate(&f, &work)?;
            work[i].data_mut()[j] = base;
            let a = analytic.data()[j];
            if !(fp.is_finite() && fm.is_finite() && a.is_finite()) {
                return Err(Error::NonFinite(format!("gradcheck of parameter {i}, element {j}")));
            }
            let c = (fp - fm) / (2.0 * eps);
            let rel = (a - c).abs() / a.abs().max(c.abs()).max(1e-12);
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel.max(report.max_rel_error);
                report.worst = Some((i, j));
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let r = gradcheck(
            |t, p| {
                let sq = t.mul(p[0], p[0])?;
                Ok(t.sum(sq))
            },
            &[Tensor::scalar(3.0)],
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error <= 1e-10, "{}", r.max_rel_error);
    }

    #[test]
    fn leaky_slope_away_from_kink() {
        let r = gradcheck(
            |t, p| {
                let y = t.leaky_relu(p[0], 0.2);
                Ok(t.sum(y))
            },
            &[Tensor::scalar(-1.0)],
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error <= 1e-9);
        assert_eq!(r.min_kink_distance, Some(1.0));
    }

    #[test]
    fn step_out_of_range() {
        let f = |t: &mut Tape<f64>, p: &[Var]| Ok(t.sum(p[0]));
        assert!(gradcheck(f, &[Tensor::scalar(1.0)], 1e-2).is_err());
    }

    #[test]
    fn non_finite_names_parameter() {
        let err = gradcheck(
            |t, p| {
                let y = t.mul(p[0], p[1])?;
                Ok(t.sum(y))
            },
            &[Tensor::scalar(0.0), Tensor::scalar(f64::INFINITY)],
            1e-5,
        )
        .unwrap_err();
        assert!(err.to_string().contains("parameter 0"));
    }
}
