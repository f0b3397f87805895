use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::CoreError;
use crate::tensor::{Scalar, Tensor};

/// Elementwise sum of two same-shape tensors (the residual skip join).
pub fn add_forward<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>, CoreError> {
    if a.shape() != b.shape() {
        return Err(CoreError::ShapeMismatch(format!(
            "add operands {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let data: Vec<S> = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| x + y)
        .collect();
    Tensor::new(a.shape().to_vec(), data)
}

/// Channel-axis concatenation of rank-5 tensors, in argument order.
pub fn concat_channels_forward<S: Scalar>(
    inputs: &[&Tensor<S>],
) -> Result<Tensor<S>, CoreError> {
    if inputs.is_empty() {
        return Err(CoreError::ShapeMismatch("concat of zero inputs".into()));
    }
    let [n, _, d, h, w] = inputs[0].dims5()?;
    let mut total_c = 0;
    for t in inputs {
        let [tn, tc, td, th, tw] = t.dims5()?;
        if (tn, td, th, tw) != (n, d, h, w) {
            return Err(CoreError::ShapeMismatch(format!(
                "concat input shape {:?} disagrees with {:?}",
                t.shape(),
                inputs[0].shape()
            )));
        }
        total_c += tc;
    }
    let sp = d * h * w;
    let mut out = Tensor::zeros(vec![n, total_c, d, h, w]);
    for i in 0..n {
        let mut c_off = 0;
        for t in inputs {
            let tc = t.shape()[1];
            let src = &t.data()[i * tc * sp..][..tc * sp];
            out.data_mut()[(i * total_c + c_off) * sp..][..tc * sp].copy_from_slice(src);
            c_off += tc;
        }
    }
    Ok(out)
}

/// Split the output gradient back into per-input channel ranges.
pub fn concat_channels_backward<S: Scalar>(
    input_shapes: &[&[usize]],
    grad_out: &Tensor<S>,
) -> Vec<Tensor<S>> {
    let [n, total_c, d, h, w] = grad_out.dims5().expect("validated at forward time");
    let sp = d * h * w;
    let mut grads: Vec<Tensor<S>> = input_shapes
        .iter()
        .map(|s| Tensor::zeros(s.to_vec()))
        .collect();
    for i in 0..n {
        let mut c_off = 0;
        for gi in grads.iter_mut() {
            let tc = gi.shape()[1];
            let dst = &mut gi.data_mut()[i * tc * sp..][..tc * sp];
            dst.copy_from_slice(&grad_out.data()[(i * total_c + c_off) * sp..][..tc * sp]);
            c_off += tc;
        }
    }
    grads
}
