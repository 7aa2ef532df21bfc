use super::tensor::Tensor;
use crate::error::{shape_err, Error, Result};

/// Mean softmax cross-entropy over the batch.
///
/// Returns the loss and `(softmax - onehot) / batch` as the logit gradient.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let batch = logits.rows();
    let classes = logits.cols();
    if labels.len() != batch {
        return Err(shape_err("softmax_cross_entropy labels", &[batch], &[labels.len()]));
    }
    logits.ensure_finite("softmax_cross_entropy logits")?;
    let mut grad = Tensor::zeros(&[batch, classes]);
    let mut loss = 0.0;
    for (i, (&label, row)) in labels.iter().zip(logits.iter_rows()).enumerate() {
        if label >= classes {
            return Err(Error::InvalidArgument(format!(
                "label {label} out of range for {classes} classes"
            )));
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_sum = sum.ln() + max;
        loss += log_sum - row[label];
        let g = grad.row_mut(i);
        for (j, v) in row.iter().enumerate() {
            g[j] = (v - log_sum).exp();
        }
        g[label] -= 1.0;
    }
    let inv = 1.0 / batch as f64;
    grad.scale(inv);
    Ok((loss * inv, grad))
}

/// Mean squared error over every element, with gradient `2 (pred - target) / count`.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    pred.check_same(target, "mse")?;
    let n = pred.len().max(1) as f64;
    let mut grad = pred.sub(target)?;
    let loss = grad.sum_sq() / n;
    grad.scale(2.0 / n);
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_two_classes() {
        let logits = Tensor::matrix(1, 2, vec![0.3, 0.3]).unwrap();
        let (loss, _) = softmax_cross_entropy(&logits, &[1]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn saturated_correct_logit() {
        let logits = Tensor::matrix(1, 3, vec![500.0, 0.0, -2.0]).unwrap();
        let (loss, grad) = softmax_cross_entropy(&logits, &[0]).unwrap();
        assert!(loss < 1e-100);
        assert!(grad.max_abs() < 1e-100);
    }

    #[test]
    fn label_out_of_range() {
        let logits = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
        assert!(softmax_cross_entropy(&logits, &[2]).is_err());
    }

    #[test]
    fn ce_gradient_rows_sum_to_zero() {
        let logits = Tensor::matrix(2, 3, vec![0.1, -0.4, 2.0, 1.0, 1.0, -1.0]).unwrap();
        let (_, grad) = softmax_cross_entropy(&logits, &[2, 0]).unwrap();
        for row in grad.iter_rows() {
            assert!(row.iter().sum::<f64>().abs() < 1e-15);
        }
    }

    #[test]
    fn mse_cases() {
        let a = Tensor::vector(vec![0.5, 0.2, 0.9]);
        assert_eq!(mse(&a, &a).unwrap().0, 0.0);
        let b = Tensor::vector(vec![0.6, 0.3, 1.0]);
        assert!((mse(&b, &a).unwrap().0 - 0.01).abs() < 1e-15);
        assert!(mse(&a, &Tensor::vector(vec![0.0; 2])).is_err());
    }
}
