use alloc::format;
use alloc::vec;

use crate::error::CoreError;
use crate::tensor::{Scalar, Tensor};

/// Affine map: input N×F times weights F×M plus bias M.
pub fn dense_forward<S: Scalar>(
    input: &Tensor<S>,
    weights: &Tensor<S>,
    bias: &Tensor<S>,
) -> Result<Tensor<S>, CoreError> {
    let [n, f] = input.dims2()?;
    let [wf, m] = weights.dims2()?;
    if wf != f || bias.shape() != [m] {
        return Err(CoreError::ShapeMismatch(format!(
            "dense shapes disagree: input {:?}, weights {:?}, bias {:?}",
            input.shape(),
            weights.shape(),
            bias.shape()
        )));
    }
    let x = input.data();
    let w = weights.data();
    let mut out = Tensor::zeros(vec![n, m]);
    for i in 0..n {
        for j in 0..m {
            let mut acc = bias.data()[j].as_f64();
            for p in 0..f {
                acc += x[i * f + p].as_f64() * w[p * m + j].as_f64();
            }
            out.data_mut()[i * m + j] = S::from_f64(acc);
        }
    }
    if !out.all_finite() {
        return Err(CoreError::Numeric(
            "dense layer produced non-finite values".into(),
        ));
    }
    Ok(out)
}

pub struct DenseGrads<S> {
    pub input: Option<Tensor<S>>,
    pub weights: Tensor<S>,
    pub bias: Tensor<S>,
}

pub fn dense_backward<S: Scalar>(
    input: &Tensor<S>,
    weights: &Tensor<S>,
    grad_out: &Tensor<S>,
    need_input_grad: bool,
) -> DenseGrads<S> {
    let [n, f] = input.dims2().expect("validated at forward time");
    let [_, m] = weights.dims2().expect("validated at forward time");
    let x = input.data();
    let w = weights.data();
    let g = grad_out.data();

    let mut gw = vec![0.0f64; f * m];
    let mut gb = vec![0.0f64; m];
    for i in 0..n {
        for j in 0..m {
            let gij = g[i * m + j].as_f64();
            gb[j] += gij;
            for p in 0..f {
                gw[p * m + j] += x[i * f + p].as_f64() * gij;
            }
        }
    }
    let gin = need_input_grad.then(|| {
        let mut gi = Tensor::zeros(vec![n, f]);
        for i in 0..n {
            for p in 0..f {
                let mut acc = 0.0f64;
                for j in 0..m {
                    acc += g[i * m + j].as_f64() * w[p * m + j].as_f64();
                }
                gi.data_mut()[i * f + p] = S::from_f64(acc);
            }
        }
        gi
    });
    DenseGrads {
        input: gin,
        weights: Tensor::new(vec![f, m], gw.into_iter().map(S::from_f64).collect())
            .expect("weight gradient shape is consistent"),
        bias: Tensor::new(vec![m], gb.into_iter().map(S::from_f64).collect())
            .expect("bias gradient shape is consistent"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights_zero_bias_copy_input() {
        let input = Tensor::<f32>::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let eye = Tensor::<f32>::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let bias = Tensor::<f32>::zeros(vec![2]);
        let out = dense_forward(&input, &eye, &bias).unwrap();
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn hand_case_1_2_maps_to_4() {
        let input = Tensor::<f32>::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::<f32>::new(vec![2, 1], vec![1.0, 1.0]).unwrap();
        let bias = Tensor::<f32>::new(vec![1], vec![1.0]).unwrap();
        let out = dense_forward(&input, &w, &bias).unwrap();
        assert_eq!(out.data(), &[4.0]);
    }

    #[test]
    fn inner_dimension_mismatch_is_rejected() {
        let input = Tensor::<f32>::zeros(vec![1, 3]);
        let w = Tensor::<f32>::zeros(vec![2, 1]);
        let bias = Tensor::<f32>::zeros(vec![1]);
        assert!(dense_forward(&input, &w, &bias).is_err());
    }
}
