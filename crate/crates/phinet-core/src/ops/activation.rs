use alloc::vec;
use alloc::vec::Vec;

use crate::error::CoreError;
use crate::tensor::{Scalar, Tensor};

/// Elementwise max(x, 0). The subgradient at exactly 0 is taken as 0.
pub fn relu_forward<S: Scalar>(input: &Tensor<S>) -> Tensor<S> {
    let data: Vec<S> = input
        .data()
        .iter()
        .map(|&v| if v > S::zero() { v } else { S::zero() })
        .collect();
    Tensor::new(input.shape().to_vec(), data).expect("shape preserved")
}

pub fn relu_backward<S: Scalar>(input: &Tensor<S>, grad_out: &Tensor<S>) -> Tensor<S> {
    let data: Vec<S> = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > S::zero() { g } else { S::zero() })
        .collect();
    Tensor::new(input.shape().to_vec(), data).expect("shape preserved")
}

/// Row-wise softmax over N×K logits, computed with max-subtraction.
pub fn softmax_forward<S: Scalar>(logits: &Tensor<S>) -> Result<Tensor<S>, CoreError> {
    let [n, k] = logits.dims2()?;
    if k < 2 {
        return Err(CoreError::ShapeMismatch(
            "softmax needs at least 2 classes".into(),
        ));
    }
    if !logits.all_finite() {
        return Err(CoreError::InvalidData("non-finite logits".into()));
    }
    let mut out = Tensor::zeros(vec![n, k]);
    for i in 0..n {
        let row = &logits.data()[i * k..][..k];
        let mut mx = row[0];
        for &v in row {
            if v > mx {
                mx = v;
            }
        }
        let mut denom = 0.0f64;
        for &v in row {
            denom += libm::exp((v - mx).as_f64());
        }
        for (j, &v) in row.iter().enumerate() {
            out.data_mut()[i * k + j] = S::from_f64(libm::exp((v - mx).as_f64()) / denom);
        }
    }
    Ok(out)
}

/// Backward for standalone softmax: g_in = p * (g - sum(g * p)) per row.
pub fn softmax_backward<S: Scalar>(probs: &Tensor<S>, grad_out: &Tensor<S>) -> Tensor<S> {
    let [n, k] = probs.dims2().expect("validated at forward time");
    let mut gin = Tensor::zeros(vec![n, k]);
    for i in 0..n {
        let p = &probs.data()[i * k..][..k];
        let g = &grad_out.data()[i * k..][..k];
        let dot: f64 = p.iter().zip(g).map(|(&a, &b)| a.as_f64() * b.as_f64()).sum();
        for j in 0..k {
            gin.data_mut()[i * k + j] = S::from_f64(p[j].as_f64() * (g[j].as_f64() - dot));
        }
    }
    gin
}
