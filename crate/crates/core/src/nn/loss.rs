use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

fn same_shape<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<()> {
    if pred.dims() != target.dims() {
        return Err(Error::shape(format!(
            "loss between {:?} and {:?}",
            pred.dims(),
            target.dims()
        )));
    }
    if pred.is_empty() {
        return Err(Error::shape("loss over an empty tensor"));
    }
    Ok(())
}

/// Mean over all elements of the squared difference.
pub fn mse_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    same_shape(pred, target)?;
    let sum = pred
        .data()
        .iter()
        .zip(target.data())
        .fold(T::zero(), |acc, (&p, &t)| acc + (p - t) * (p - t));
    Ok(sum / T::from_usize(pred.len()).unwrap())
}

/// Loss value and its gradient with respect to `pred`.
pub fn mse_loss_grad<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    let loss = mse_loss(pred, target)?;
    let scale = T::lit(2.0) / T::from_usize(pred.len()).unwrap();
    let grad = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| scale * (p - t))
        .collect();
    Ok((loss, Tensor::from_vec(pred.dims(), grad)?))
}

/// Row-wise softmax of `[B, V]` logits, max-shifted for stability.
pub fn softmax_rows<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, v] = *logits.dims() else {
        return Err(Error::shape(format!("softmax expects [B, V], got {:?}", logits.dims())));
    };
    let mut out = logits.clone();
    for row in out.data_mut().chunks_exact_mut(v) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        row.iter_mut().for_each(|x| *x /= sum);
    }
    Ok(out)
}

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let probs = softmax_rows(logits)?;
    let [b, v] = *logits.dims() else { unreachable!() };
    if labels.len() != b {
        return Err(Error::shape(format!("{} labels for a batch of {b}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= v) {
        return Err(Error::data(format!("label {bad} outside {v} classes")));
    }
    let n = T::from_usize(b).unwrap();
    let tiny = T::min_positive_value();
    let mut loss = T::zero();
    let mut grad = probs.clone();
    for (i, (&label, row)) in labels.iter().zip(grad.data_mut().chunks_exact_mut(v)).enumerate() {
        loss -= probs.data()[i * v + label].max(tiny).ln();
        row[label] -= T::one();
        row.iter_mut().for_each(|g| *g /= n);
    }
    Ok((loss / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_examples() {
        let a = Tensor::<f64>::from_vec(&[2], vec![0.0, 0.0]).unwrap();
        let b = Tensor::<f64>::from_vec(&[2], vec![2.0, 0.0]).unwrap();
        assert_eq!(mse_loss(&a, &b).unwrap(), 2.0);
        assert_eq!(mse_loss(&a, &a).unwrap(), 0.0);
        assert_eq!(mse_loss(&a, &b).unwrap(), mse_loss(&b, &a).unwrap());
        let (_, g) = mse_loss_grad(&a, &a).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mse_shape_mismatch() {
        let a = Tensor::<f32>::zeros(&[2]);
        let b = Tensor::<f32>::zeros(&[3]);
        assert!(matches!(mse_loss(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::<f64>::from_vec(&[2, 3], vec![1000.0, 0.0, -3.0, 0.1, 0.2, 0.3]).unwrap();
        let p = softmax_rows(&x).unwrap();
        for row in p.data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let x = Tensor::<f64>::zeros(&[2, 4]);
        let (loss, grad) = softmax_cross_entropy(&x, &[0, 3]).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        assert!((grad.data()[0] - (0.25 - 1.0) / 2.0).abs() < 1e-12);
        assert!((grad.data()[1] - 0.125).abs() < 1e-12);
    }
}
