use alloc::format;

use crate::error::CoreError;
use crate::ops::activation::softmax_forward;
use crate::tensor::{Scalar, Tensor};

/// Probability clamp applied to loss values so a confidently wrong
/// prediction yields a large but finite loss.
pub const PROB_CLAMP: f64 = 1e-7;

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

fn check_labels(labels: &[usize], n: usize, k: usize) -> Result<(), CoreError> {
    if labels.len() != n {
        return Err(CoreError::ShapeMismatch(format!(
            "{} labels for {} rows",
            labels.len(),
            n
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(CoreError::InvalidData(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    Ok(())
}

/// Mean categorical cross-entropy of given probability rows.
pub fn categorical_cross_entropy_value<S: Scalar>(
    probs: &Tensor<S>,
    labels: &[usize],
) -> Result<f64, CoreError> {
    let [n, k] = probs.dims2()?;
    check_labels(labels, n, k)?;
    for i in 0..n {
        let row_sum: f64 = probs.data()[i * k..][..k].iter().map(|v| v.as_f64()).sum();
        if (row_sum - 1.0).abs() > 1e-4 {
            return Err(CoreError::InvalidData(format!(
                "probability row {i} sums to {row_sum}, not 1"
            )));
        }
    }
    let mut acc = 0.0f64;
    for (i, &label) in labels.iter().enumerate() {
        acc -= libm::log(clamp_prob(probs.data()[i * k + label].as_f64()));
    }
    Ok(acc / n as f64)
}

/// Fused softmax + categorical cross-entropy: numerically the standard
/// training loss, with the textbook gradient (probs - onehot) / N.
pub fn softmax_cross_entropy_forward<S: Scalar>(
    logits: &Tensor<S>,
    labels: &[usize],
) -> Result<(Tensor<S>, Tensor<S>), CoreError> {
    let [n, k] = logits.dims2()?;
    check_labels(labels, n, k)?;
    let probs = softmax_forward(logits)?;
    let mut acc = 0.0f64;
    for (i, &label) in labels.iter().enumerate() {
        acc -= libm::log(clamp_prob(probs.data()[i * k + label].as_f64()));
    }
    Ok((Tensor::scalar(S::from_f64(acc / n as f64)), probs))
}

pub fn softmax_cross_entropy_backward<S: Scalar>(
    probs: &Tensor<S>,
    labels: &[usize],
    grad_scalar: S,
) -> Tensor<S> {
    let [n, k] = probs.dims2().expect("validated at forward time");
    let scale = grad_scalar.as_f64() / n as f64;
    let mut gin = probs.clone();
    for (i, &label) in labels.iter().enumerate() {
        let row = &mut gin.data_mut()[i * k..][..k];
        row[label] = row[label] - S::one();
        for v in row.iter_mut() {
            *v = S::from_f64(v.as_f64() * scale);
        }
    }
    gin
}

fn check_binary_inputs<S: Scalar>(
    prob: &Tensor<S>,
    labels: &[usize],
) -> Result<usize, CoreError> {
    let n = match *prob.shape() {
        [n] => n,
        [n, 1] => n,
        _ => {
            return Err(CoreError::ShapeMismatch(format!(
                "binary cross-entropy expects N or Nx1 probabilities, got {:?}",
                prob.shape()
            )))
        }
    };
    if labels.len() != n {
        return Err(CoreError::ShapeMismatch(format!(
            "{} labels for {} probabilities",
            labels.len(),
            n
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(CoreError::InvalidData(format!(
            "binary label {bad} outside {{0, 1}}"
        )));
    }
    if prob
        .data()
        .iter()
        .any(|&p| !(S::zero()..=S::one()).contains(&p))
    {
        return Err(CoreError::InvalidData(
            "probabilities outside [0, 1]".into(),
        ));
    }
    Ok(n)
}

/// Mean of -[y ln p + (1 - y) ln(1 - p)] over the batch.
pub fn binary_cross_entropy_value<S: Scalar>(
    prob: &Tensor<S>,
    labels: &[usize],
) -> Result<f64, CoreError> {
    let n = check_binary_inputs(prob, labels)?;
    let mut acc = 0.0f64;
    for (i, &y) in labels.iter().enumerate() {
        let p = clamp_prob(prob.data()[i].as_f64());
        acc -= if y == 1 {
            libm::log(p)
        } else {
            libm::log(1.0 - p)
        };
    }
    Ok(acc / n as f64)
}

pub fn binary_cross_entropy_backward<S: Scalar>(
    prob: &Tensor<S>,
    labels: &[usize],
    grad_scalar: S,
) -> Tensor<S> {
    let n = labels.len();
    let scale = grad_scalar.as_f64() / n as f64;
    let mut gin = Tensor::zeros(prob.shape().to_vec());
    for (i, &y) in labels.iter().enumerate() {
        let p = clamp_prob(prob.data()[i].as_f64());
        gin.data_mut()[i] = S::from_f64((p - y as f64) / (p * (1.0 - p)) * scale);
    }
    gin
}
