use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::CoreError;
use crate::tensor::{Scalar, Tensor};

fn pooled_extents(
    dims: [usize; 5],
    window: usize,
    stride: usize,
) -> Result<[usize; 3], CoreError> {
    let [_, _, d, h, w] = dims;
    if window < 1 || stride < 1 {
        return Err(CoreError::InvalidConfig(
            "pool window and stride must be at least 1".into(),
        ));
    }
    if window > d || window > h || window > w {
        return Err(CoreError::ShapeMismatch(format!(
            "pool window {window} exceeds spatial extents {d}x{h}x{w}"
        )));
    }
    Ok([
        (d - window) / stride + 1,
        (h - window) / stride + 1,
        (w - window) / stride + 1,
    ])
}

/// Max pooling. Returns the output and, per output element, the flat input
/// index of its maximum (ties resolved to the lowest linear index, which the
/// in-order strict comparison below yields for free).
pub fn max_pool3d_forward<S: Scalar>(
    input: &Tensor<S>,
    window: usize,
    stride: usize,
) -> Result<(Tensor<S>, Vec<usize>), CoreError> {
    let dims = input.dims5()?;
    let [n_items, ch, d, h, w] = dims;
    let [od, oh, ow] = pooled_extents(dims, window, stride)?;
    let data = input.data();
    let mut out = Tensor::zeros(vec![n_items, ch, od, oh, ow]);
    let mut argmax = vec![0usize; out.len()];
    let mut j = 0;
    for n in 0..n_items {
        for c in 0..ch {
            let base = (n * ch + c) * d * h * w;
            for oz in 0..od {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = S::neg_infinity();
                        let mut best_idx = 0usize;
                        for kz in 0..window {
                            for ky in 0..window {
                                let row =
                                    base + ((oz * stride + kz) * h + oy * stride + ky) * w
                                        + ox * stride;
                                for kx in 0..window {
                                    let v = data[row + kx];
                                    if v > best {
                                        best = v;
                                        best_idx = row + kx;
                                    }
                                }
                            }
                        }
                        out.data_mut()[j] = best;
                        argmax[j] = best_idx;
                        j += 1;
                    }
                }
            }
        }
    }
    Ok((out, argmax))
}

pub fn max_pool3d_backward<S: Scalar>(
    input_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor<S>,
) -> Tensor<S> {
    let mut gin = Tensor::zeros(input_shape.to_vec());
    let gdata = gin.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        gdata[idx] = gdata[idx] + g;
    }
    gin
}

pub fn avg_pool3d_forward<S: Scalar>(
    input: &Tensor<S>,
    window: usize,
    stride: usize,
) -> Result<Tensor<S>, CoreError> {
    let dims = input.dims5()?;
    let [n_items, ch, d, h, w] = dims;
    let [od, oh, ow] = pooled_extents(dims, window, stride)?;
    let data = input.data();
    let inv = 1.0 / (window * window * window) as f64;
    let mut out = Tensor::zeros(vec![n_items, ch, od, oh, ow]);
    let mut j = 0;
    for n in 0..n_items {
        for c in 0..ch {
            let base = (n * ch + c) * d * h * w;
            for oz in 0..od {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0f64;
                        for kz in 0..window {
                            for ky in 0..window {
                                let row =
                                    base + ((oz * stride + kz) * h + oy * stride + ky) * w
                                        + ox * stride;
                                for kx in 0..window {
                                    acc += data[row + kx].as_f64();
                                }
                            }
                        }
                        out.data_mut()[j] = S::from_f64(acc * inv);
                        j += 1;
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn avg_pool3d_backward<S: Scalar>(
    input_shape: &[usize],
    window: usize,
    stride: usize,
    grad_out: &Tensor<S>,
) -> Tensor<S> {
    let [n_items, ch, d, h, w] = [
        input_shape[0],
        input_shape[1],
        input_shape[2],
        input_shape[3],
        input_shape[4],
    ];
    let [_, _, od, oh, ow] = grad_out.dims5().expect("grad shape matches forward output");
    let inv = S::from_f64(1.0 / (window * window * window) as f64);
    let mut gin = Tensor::zeros(input_shape.to_vec());
    let gdata = gin.data_mut();
    let g = grad_out.data();
    let mut j = 0;
    for n in 0..n_items {
        for c in 0..ch {
            let base = (n * ch + c) * d * h * w;
            for oz in 0..od {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let share = g[j] * inv;
                        for kz in 0..window {
                            for ky in 0..window {
                                let row =
                                    base + ((oz * stride + kz) * h + oy * stride + ky) * w
                                        + ox * stride;
                                for kx in 0..window {
                                    gdata[row + kx] = gdata[row + kx] + share;
                                }
                            }
                        }
                        j += 1;
                    }
                }
            }
        }
    }
    gin
}

/// Mean over all spatial positions per channel: N×C×D×H×W to N×C.
pub fn global_avg_pool_forward<S: Scalar>(input: &Tensor<S>) -> Result<Tensor<S>, CoreError> {
    let [n_items, ch, d, h, w] = input.dims5()?;
    let sp = d * h * w;
    let inv = 1.0 / sp as f64;
    let data = input.data();
    let mut out = Tensor::zeros(vec![n_items, ch]);
    for nc in 0..n_items * ch {
        let acc: f64 = data[nc * sp..][..sp].iter().map(|v| v.as_f64()).sum();
        out.data_mut()[nc] = S::from_f64(acc * inv);
    }
    Ok(out)
}

pub fn global_avg_pool_backward<S: Scalar>(
    input_shape: &[usize],
    grad_out: &Tensor<S>,
) -> Tensor<S> {
    let sp: usize = input_shape[2..].iter().product();
    let inv = S::from_f64(1.0 / sp as f64);
    let mut gin = Tensor::zeros(input_shape.to_vec());
    let gdata = gin.data_mut();
    for (nc, &g) in grad_out.data().iter().enumerate() {
        let share = g * inv;
        for v in gdata[nc * sp..][..sp].iter_mut() {
            *v = share;
        }
    }
    gin
}
