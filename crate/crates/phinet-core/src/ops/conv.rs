use alloc::format;
use alloc::vec;

use crate::error::CoreError;
use crate::tensor::{Scalar, Tensor};

/// Cubic 3D convolution configuration (cross-correlation convention).
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self, CoreError> {
        if in_channels == 0 || out_channels == 0 {
            return Err(CoreError::InvalidConfig(
                "channel counts must be positive".into(),
            ));
        }
        if kernel < 1 || stride < 1 {
            return Err(CoreError::InvalidConfig(
                "kernel and stride must be at least 1".into(),
            ));
        }
        Ok(ConvSpec {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        })
    }

    /// Output extent along one axis, or an error when it would vanish.
    pub fn out_extent(&self, in_extent: usize) -> Result<usize, CoreError> {
        let padded = in_extent + 2 * self.padding;
        if padded < self.kernel {
            return Err(CoreError::ShapeMismatch(format!(
                "padded extent {padded} smaller than kernel {}",
                self.kernel
            )));
        }
        Ok((padded - self.kernel) / self.stride + 1)
    }

    fn validate(
        &self,
        input: &Tensor<impl Scalar>,
        weights: &Tensor<impl Scalar>,
        bias: &Tensor<impl Scalar>,
    ) -> Result<([usize; 5], [usize; 3]), CoreError> {
        let dims = input.dims5()?;
        let [_, cin, d, h, w] = dims;
        if cin != self.in_channels {
            return Err(CoreError::ShapeMismatch(format!(
                "input has {cin} channels, spec expects {}",
                self.in_channels
            )));
        }
        let k = self.kernel;
        let expected_w = [self.out_channels, self.in_channels, k, k, k];
        if weights.shape() != expected_w {
            return Err(CoreError::ShapeMismatch(format!(
                "weights shape {:?}, expected {:?}",
                weights.shape(),
                expected_w
            )));
        }
        if bias.shape() != [self.out_channels] {
            return Err(CoreError::ShapeMismatch(format!(
                "bias shape {:?}, expected [{}]",
                bias.shape(),
                self.out_channels
            )));
        }
        let out = [
            self.out_extent(d)?,
            self.out_extent(h)?,
            self.out_extent(w)?,
        ];
        Ok((dims, out))
    }
}

/// Copy one channel into a zero-padded f64 scratch volume.
fn pad_channel<S: Scalar>(src: &[S], d: usize, h: usize, w: usize, pad: usize, dst: &mut [f64]) {
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    for v in dst.iter_mut() {
        *v = 0.0;
    }
    for z in 0..d {
        for y in 0..h {
            let src_row = (z * h + y) * w;
            let dst_row = ((z + pad) * ph + y + pad) * pw + pad;
            for x in 0..w {
                dst[dst_row + x] = src[src_row + x].as_f64();
            }
        }
    }
}

pub fn conv3d_forward<S: Scalar>(
    input: &Tensor<S>,
    weights: &Tensor<S>,
    bias: &Tensor<S>,
    spec: &ConvSpec,
) -> Result<Tensor<S>, CoreError> {
    let ([n_items, cin, d, h, w], [od, oh, ow]) = spec.validate(input, weights, bias)?;
    let (k, s, p) = (spec.kernel, spec.stride, spec.padding);
    let cout = spec.out_channels;
    let (pd, ph, pw) = (d + 2 * p, h + 2 * p, w + 2 * p);
    let out_sp = od * oh * ow;
    let in_sp = d * h * w;

    let mut scratch = vec![0.0f64; pd * ph * pw];
    let mut acc = vec![0.0f64; cout * out_sp];
    let mut out = Tensor::zeros(vec![n_items, cout, od, oh, ow]);
    let out_data = out.data_mut();
    let wdata = weights.data();
    let idata = input.data();

    for n in 0..n_items {
        for v in acc.iter_mut() {
            *v = 0.0;
        }
        for ci in 0..cin {
            pad_channel(&idata[(n * cin + ci) * in_sp..][..in_sp], d, h, w, p, &mut scratch);
            for co in 0..cout {
                let acc_ch = &mut acc[co * out_sp..][..out_sp];
                for kz in 0..k {
                    for ky in 0..k {
                        for kx in 0..k {
                            let wv = wdata[(((co * cin + ci) * k + kz) * k + ky) * k + kx].as_f64();
                            if wv == 0.0 {
                                continue;
                            }
                            for oz in 0..od {
                                let src_z = (oz * s + kz) * ph;
                                for oy in 0..oh {
                                    let src_row = (src_z + oy * s + ky) * pw + kx;
                                    let dst_row = (oz * oh + oy) * ow;
                                    for ox in 0..ow {
                                        acc_ch[dst_row + ox] += wv * scratch[src_row + ox * s];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        for co in 0..cout {
            let b = bias.data()[co].as_f64();
            let dst = &mut out_data[(n * cout + co) * out_sp..][..out_sp];
            for (o, a) in dst.iter_mut().zip(&acc[co * out_sp..][..out_sp]) {
                *o = S::from_f64(a + b);
            }
        }
    }

    if !out.all_finite() {
        return Err(CoreError::Numeric(
            "convolution produced non-finite values".into(),
        ));
    }
    Ok(out)
}

pub struct ConvGrads<S> {
    pub input: Option<Tensor<S>>,
    pub weights: Tensor<S>,
    pub bias: Tensor<S>,
}

/// Backward rule for [`conv3d_forward`]. `grad_out` has the forward output
/// shape; the input gradient is skipped when `need_input_grad` is false
/// (first-layer inputs are data, not parameters).
pub fn conv3d_backward<S: Scalar>(
    input: &Tensor<S>,
    weights: &Tensor<S>,
    spec: &ConvSpec,
    grad_out: &Tensor<S>,
    need_input_grad: bool,
) -> ConvGrads<S> {
    let [n_items, cin, d, h, w] = input.dims5().expect("validated at forward time");
    let (k, s, p) = (spec.kernel, spec.stride, spec.padding);
    let cout = spec.out_channels;
    let [_, gc, od, oh, ow] = grad_out.dims5().expect("grad shape matches forward output");
    assert_eq!(gc, cout, "grad channel mismatch");
    let (pd, ph, pw) = (d + 2 * p, h + 2 * p, w + 2 * p);
    let out_sp = od * oh * ow;
    let in_sp = d * h * w;
    let pad_sp = pd * ph * pw;

    let idata = input.data();
    let wdata = weights.data();
    let gdata = grad_out.data();

    let mut gw_acc = vec![0.0f64; cout * cin * k * k * k];
    let mut gb_acc = vec![0.0f64; cout];
    let mut gin = if need_input_grad {
        Some(Tensor::<S>::zeros(vec![n_items, cin, d, h, w]))
    } else {
        None
    };

    let mut gbuf = vec![0.0f64; cout * out_sp];
    let mut scratch = vec![0.0f64; pad_sp];
    let mut gpad = vec![0.0f64; pad_sp];

    for n in 0..n_items {
        for (gv, src) in gbuf.iter_mut().zip(&gdata[n * cout * out_sp..][..cout * out_sp]) {
            *gv = src.as_f64();
        }
        for co in 0..cout {
            let g_ch = &gbuf[co * out_sp..][..out_sp];
            gb_acc[co] += g_ch.iter().sum::<f64>();
        }
        for ci in 0..cin {
            pad_channel(&idata[(n * cin + ci) * in_sp..][..in_sp], d, h, w, p, &mut scratch);
            if need_input_grad {
                for v in gpad.iter_mut() {
                    *v = 0.0;
                }
            }
            for co in 0..cout {
                let g_ch = &gbuf[co * out_sp..][..out_sp];
                for kz in 0..k {
                    for ky in 0..k {
                        for kx in 0..k {
                            let widx = (((co * cin + ci) * k + kz) * k + ky) * k + kx;
                            let wv = wdata[widx].as_f64();
                            let mut wsum = 0.0f64;
                            for oz in 0..od {
                                let src_z = (oz * s + kz) * ph;
                                for oy in 0..oh {
                                    let src_row = (src_z + oy * s + ky) * pw + kx;
                                    let g_row = (oz * oh + oy) * ow;
                                    if need_input_grad && wv != 0.0 {
                                        for ox in 0..ow {
                                            let g = g_ch[g_row + ox];
                                            wsum += g * scratch[src_row + ox * s];
                                            gpad[src_row + ox * s] += wv * g;
                                        }
                                    } else {
                                        for ox in 0..ow {
                                            wsum += g_ch[g_row + ox] * scratch[src_row + ox * s];
                                        }
                                    }
                                }
                            }
                            gw_acc[widx] += wsum;
                        }
                    }
                }
            }
            if let Some(gin) = gin.as_mut() {
                let dst = &mut gin.data_mut()[(n * cin + ci) * in_sp..][..in_sp];
                for z in 0..d {
                    for y in 0..h {
                        let src_row = ((z + p) * ph + y + p) * pw + p;
                        let dst_row = (z * h + y) * w;
                        for x in 0..w {
                            dst[dst_row + x] = S::from_f64(gpad[src_row + x]);
                        }
                    }
                }
            }
        }
    }

    let gw = Tensor::new(
        vec![cout, cin, k, k, k],
        gw_acc.into_iter().map(S::from_f64).collect(),
    )
    .expect("weight gradient shape is consistent by construction");
    let gb = Tensor::new(vec![cout], gb_acc.into_iter().map(S::from_f64).collect())
        .expect("bias gradient shape is consistent by construction");
    ConvGrads {
        input: gin,
        weights: gw,
        bias: gb,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    #[test]
    fn all_ones_cube_sums_to_27() {
        let input = Tensor::<f32>::full(vec![1, 1, 3, 3, 3], 1.0);
        let weights = Tensor::<f32>::full(vec![1, 1, 3, 3, 3], 1.0);
        let bias = Tensor::<f32>::zeros(vec![1]);
        let spec = ConvSpec::new(1, 1, 3, 1, 0).unwrap();
        let out = conv3d_forward(&input, &weights, &bias, &spec).unwrap();
        assert_eq!(out.shape(), [1, 1, 1, 1, 1]);
        assert_eq!(out.data(), &[27.0]);
    }

    #[test]
    fn identity_kernel_copies_input() {
        let data: Vec<f32> = (0..2 * 27).map(|v| v as f32 * 0.25).collect();
        let input = Tensor::new(vec![1, 2, 3, 3, 3], data).unwrap();
        let mut w = Tensor::<f32>::zeros(vec![2, 2, 1, 1, 1]);
        w.data_mut()[0] = 1.0; // co=0 reads ci=0
        w.data_mut()[3] = 1.0; // co=1 reads ci=1
        let bias = Tensor::<f32>::zeros(vec![2]);
        let spec = ConvSpec::new(2, 2, 1, 1, 0).unwrap();
        let out = conv3d_forward(&input, &w, &bias, &spec).unwrap();
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn vanishing_output_extent_is_rejected() {
        let spec = ConvSpec::new(1, 1, 5, 1, 0).unwrap();
        assert!(spec.out_extent(3).is_err());
    }
}
