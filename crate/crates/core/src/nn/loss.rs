use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Mean softmax cross-entropy over the rows of `logits` (batch x classes).
/// Returns the loss and the row-wise softmax.
pub fn softmax_xent<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    if logits.rank() != 2 || logits.dims()[0] != labels.len() {
        return Err(Error::Shape(format!(
            "logits {:?} for {} labels",
            logits.dims(),
            labels.len()
        )));
    }
    let classes = logits.dims()[1];
    let mut probs = Vec::with_capacity(logits.len());
    let mut total = T::zero();
    for (row, &label) in logits.data().chunks_exact(classes).zip(labels) {
        if label >= classes {
            return Err(Error::Label { label, classes });
        }
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let z: T = row.iter().map(|&v| (v - m).exp()).sum();
        let log_z = z.ln();
        total += log_z - (row[label] - m);
        probs.extend(row.iter().map(|&v| (v - m).exp() / z));
    }
    let loss = total / T::of(labels.len() as f64);
    Ok((loss, Tensor::new(logits.dims().to_vec(), probs)?))
}

/// `seed * (softmax - onehot) / batch`.
pub fn softmax_xent_backward<T: Scalar>(probs: &Tensor<T>, labels: &[usize], seed: T) -> Tensor<T> {
    let classes = probs.dims()[1];
    let scale = seed / T::of(labels.len() as f64);
    let mut g = probs.clone();
    for (row, &label) in g.data_mut().chunks_exact_mut(classes).zip(labels) {
        row[label] -= T::one();
        row.iter_mut().for_each(|v| *v *= scale);
    }
    g
}

/// Fraction of rows whose arg-max equals the label.
pub fn accuracy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> f64 {
    let classes = logits.dims()[1];
    let hits = logits
        .data()
        .chunks_exact(classes)
        .zip(labels)
        .filter(|(row, &label)| {
            let mut best = 0;
            for k in 1..classes {
                if row[k] > row[best] {
                    best = k;
                }
            }
            best == label
        })
        .count();
    hits as f64 / labels.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_classes() {
        let (loss, _) = softmax_xent(&Tensor::<f64>::zeros(&[3, 10]), &[0, 4, 9]).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn large_logit_is_stable() {
        let l = Tensor::<f32>::new(vec![1, 2], vec![1000.0, 0.0]).unwrap();
        let (loss, p) = softmax_xent(&l, &[0]).unwrap();
        assert!(loss.is_finite() && loss.abs() < 1e-6);
        assert!(p.all_finite());
        let (loss, _) = softmax_xent(&l, &[1]).unwrap();
        assert_eq!(loss, 1000.0);
    }

    #[test]
    fn label_out_of_range() {
        let err = softmax_xent(&Tensor::<f64>::zeros(&[1, 10]), &[10]);
        assert!(matches!(err, Err(Error::Label { label: 10, classes: 10 })));
    }

    #[test]
    fn accuracy_counts_argmax() {
        let l = Tensor::<f64>::new(vec![2, 3], vec![0.1, 0.9, 0.0, 2.0, 1.0, 0.0]).unwrap();
        assert_eq!(accuracy(&l, &[1, 1]), 0.5);
    }
}
