use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::CoreError;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Per-channel statistics captured at forward time for the backward pass.
#[derive(Clone, Debug)]
pub struct BnSaved {
    pub mode: BnMode,
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// Per-channel standardization over batch and spatial positions.
///
/// Train mode normalizes with the batch's own biased moments and folds them
/// into the running moments by exponential moving average; eval mode
/// normalizes with the running moments and leaves them untouched.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm_forward<S: Scalar>(
    input: &Tensor<S>,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
    running_mean: &mut Tensor<S>,
    running_var: &mut Tensor<S>,
    mode: BnMode,
    momentum: f64,
    eps: f64,
) -> Result<(Tensor<S>, BnSaved), CoreError> {
    let [n, c, d, h, w] = input.dims5()?;
    for (name, t) in [
        ("gamma", gamma),
        ("beta", beta),
        ("running_mean", &*running_mean),
        ("running_var", &*running_var),
    ] {
        if t.shape() != [c] {
            return Err(CoreError::ShapeMismatch(format!(
                "batch norm {name} shape {:?}, expected [{c}]",
                t.shape()
            )));
        }
    }
    let sp = d * h * w;
    let m = n * sp;
    if mode == BnMode::Train && m < 2 {
        return Err(CoreError::InvalidData(
            "train-mode batch norm needs at least 2 elements per channel".into(),
        ));
    }

    let data = input.data();
    let mut mean = vec![0.0f64; c];
    let mut inv_std = vec![0.0f64; c];
    for ch in 0..c {
        let (mu, var) = match mode {
            BnMode::Train => {
                let mut sum = 0.0f64;
                for i in 0..n {
                    for v in &data[(i * c + ch) * sp..][..sp] {
                        sum += v.as_f64();
                    }
                }
                let mu = sum / m as f64;
                let mut sq = 0.0f64;
                for i in 0..n {
                    for v in &data[(i * c + ch) * sp..][..sp] {
                        let dlt = v.as_f64() - mu;
                        sq += dlt * dlt;
                    }
                }
                let var = sq / m as f64;
                running_mean.data_mut()[ch] = S::from_f64(
                    (1.0 - momentum) * running_mean.data()[ch].as_f64() + momentum * mu,
                );
                running_var.data_mut()[ch] = S::from_f64(
                    (1.0 - momentum) * running_var.data()[ch].as_f64() + momentum * var,
                );
                (mu, var)
            }
            BnMode::Eval => (
                running_mean.data()[ch].as_f64(),
                running_var.data()[ch].as_f64(),
            ),
        };
        mean[ch] = mu;
        inv_std[ch] = 1.0 / libm::sqrt(var + eps);
    }

    let mut out = Tensor::zeros(vec![n, c, d, h, w]);
    for i in 0..n {
        for ch in 0..c {
            let g = gamma.data()[ch].as_f64();
            let b = beta.data()[ch].as_f64();
            let (mu, is) = (mean[ch], inv_std[ch]);
            let src = &data[(i * c + ch) * sp..][..sp];
            let dst = &mut out.data_mut()[(i * c + ch) * sp..][..sp];
            for (o, v) in dst.iter_mut().zip(src) {
                *o = S::from_f64(g * (v.as_f64() - mu) * is + b);
            }
        }
    }
    Ok((
        out,
        BnSaved {
            mode,
            mean,
            inv_std,
        },
    ))
}

pub struct BnGrads<S> {
    pub input: Tensor<S>,
    pub gamma: Tensor<S>,
    pub beta: Tensor<S>,
}

pub fn batch_norm_backward<S: Scalar>(
    input: &Tensor<S>,
    gamma: &Tensor<S>,
    saved: &BnSaved,
    grad_out: &Tensor<S>,
) -> BnGrads<S> {
    let [n, c, d, h, w] = input.dims5().expect("validated at forward time");
    let sp = d * h * w;
    let m = (n * sp) as f64;
    let data = input.data();
    let g = grad_out.data();

    let mut gin = Tensor::zeros(vec![n, c, d, h, w]);
    let mut ggamma = vec![0.0f64; c];
    let mut gbeta = vec![0.0f64; c];

    for ch in 0..c {
        let (mu, is) = (saved.mean[ch], saved.inv_std[ch]);
        let gam = gamma.data()[ch].as_f64();
        let mut sum_g = 0.0f64;
        let mut sum_gx = 0.0f64;
        for i in 0..n {
            let off = (i * c + ch) * sp;
            for j in 0..sp {
                let xhat = (data[off + j].as_f64() - mu) * is;
                let gv = g[off + j].as_f64();
                sum_g += gv;
                sum_gx += gv * xhat;
            }
        }
        ggamma[ch] = sum_gx;
        gbeta[ch] = sum_g;
        match saved.mode {
            BnMode::Train => {
                let mean_g = sum_g / m;
                let mean_gx = sum_gx / m;
                for i in 0..n {
                    let off = (i * c + ch) * sp;
                    for j in 0..sp {
                        let xhat = (data[off + j].as_f64() - mu) * is;
                        let gv = g[off + j].as_f64();
                        gin.data_mut()[off + j] =
                            S::from_f64(gam * is * (gv - mean_g - xhat * mean_gx));
                    }
                }
            }
            BnMode::Eval => {
                // running moments are constants, so the chain is elementwise
                for i in 0..n {
                    let off = (i * c + ch) * sp;
                    for j in 0..sp {
                        gin.data_mut()[off + j] = S::from_f64(gam * is * g[off + j].as_f64());
                    }
                }
            }
        }
    }

    BnGrads {
        input: gin,
        gamma: Tensor::new(vec![c], ggamma.into_iter().map(S::from_f64).collect())
            .expect("gamma gradient shape is consistent"),
        beta: Tensor::new(vec![c], gbeta.into_iter().map(S::from_f64).collect())
            .expect("beta gradient shape is consistent"),
    }
}
