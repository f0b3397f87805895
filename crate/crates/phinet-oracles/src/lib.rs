//! Brute-force reference implementations for test use only.
//!
//! Everything in this crate is written as plainly as possible — nested scalar
//! loops, two-pass formulas, numeric quadrature — and shares no code with the
//! optimized implementations it is used to verify. Keep it that way: the whole
//! value of these functions is their independence.

/// Direct 3D cross-correlation, seven nested loops, f64 accumulation.
///
/// `input` is N×Cin×D×H×W row-major, `weights` is Cout×Cin×k×k×k, `bias` has
/// one entry per output channel. Returns the output volume and its shape.
#[allow(clippy::too_many_arguments)]
pub fn conv3d_direct(
    input: &[f64],
    in_shape: [usize; 5],
    weights: &[f64],
    out_channels: usize,
    kernel: usize,
    bias: &[f64],
    stride: usize,
    pad: usize,
) -> (Vec<f64>, [usize; 5]) {
    let [n_items, in_ch, d, h, w] = in_shape;
    assert_eq!(input.len(), n_items * in_ch * d * h * w);
    assert_eq!(weights.len(), out_channels * in_ch * kernel * kernel * kernel);
    assert_eq!(bias.len(), out_channels);

    let out_d = (d + 2 * pad - kernel) / stride + 1;
    let out_h = (h + 2 * pad - kernel) / stride + 1;
    let out_w = (w + 2 * pad - kernel) / stride + 1;

    let at = |n: usize, c: usize, z: isize, y: isize, x: isize| -> f64 {
        if z < 0 || y < 0 || x < 0 || z >= d as isize || y >= h as isize || x >= w as isize {
            return 0.0; // zero padding
        }
        let (z, y, x) = (z as usize, y as usize, x as usize);
        input[(((n * in_ch + c) * d + z) * h + y) * w + x]
    };

    let mut out = vec![0.0; n_items * out_channels * out_d * out_h * out_w];
    for n in 0..n_items {
        for co in 0..out_channels {
            for oz in 0..out_d {
                for oy in 0..out_h {
                    for ox in 0..out_w {
                        let mut acc = bias[co];
                        for ci in 0..in_ch {
                            for kz in 0..kernel {
                                for ky in 0..kernel {
                                    for kx in 0..kernel {
                                        let z = (oz * stride + kz) as isize - pad as isize;
                                        let y = (oy * stride + ky) as isize - pad as isize;
                                        let x = (ox * stride + kx) as isize - pad as isize;
                                        let wv = weights[(((co * in_ch + ci) * kernel + kz)
                                            * kernel
                                            + ky)
                                            * kernel
                                            + kx];
                                        acc += wv * at(n, ci, z, y, x);
                                    }
                                }
                            }
                        }
                        out[(((n * out_channels + co) * out_d + oz) * out_h + oy) * out_w + ox] =
                            acc;
                    }
                }
            }
        }
    }
    (out, [n_items, out_channels, out_d, out_h, out_w])
}

/// Per-window maximum over a cubic window, scanning every window element.
pub fn max_pool3d_direct(
    input: &[f64],
    in_shape: [usize; 5],
    window: usize,
    stride: usize,
) -> (Vec<f64>, [usize; 5]) {
    pool3d_direct(input, in_shape, window, stride, true)
}

/// Per-window arithmetic mean over a cubic window.
pub fn avg_pool3d_direct(
    input: &[f64],
    in_shape: [usize; 5],
    window: usize,
    stride: usize,
) -> (Vec<f64>, [usize; 5]) {
    pool3d_direct(input, in_shape, window, stride, false)
}

fn pool3d_direct(
    input: &[f64],
    in_shape: [usize; 5],
    window: usize,
    stride: usize,
    take_max: bool,
) -> (Vec<f64>, [usize; 5]) {
    let [n_items, ch, d, h, w] = in_shape;
    assert!(window <= d && window <= h && window <= w);
    let out_d = (d - window) / stride + 1;
    let out_h = (h - window) / stride + 1;
    let out_w = (w - window) / stride + 1;
    let mut out = vec![0.0; n_items * ch * out_d * out_h * out_w];
    for n in 0..n_items {
        for c in 0..ch {
            for oz in 0..out_d {
                for oy in 0..out_h {
                    for ox in 0..out_w {
                        let mut best = f64::NEG_INFINITY;
                        let mut sum = 0.0;
                        for kz in 0..window {
                            for ky in 0..window {
                                for kx in 0..window {
                                    let z = oz * stride + kz;
                                    let y = oy * stride + ky;
                                    let x = ox * stride + kx;
                                    let v = input[(((n * ch + c) * d + z) * h + y) * w + x];
                                    if v > best {
                                        best = v;
                                    }
                                    sum += v;
                                }
                            }
                        }
                        let denom = (window * window * window) as f64;
                        out[(((n * ch + c) * out_d + oz) * out_h + oy) * out_w + ox] =
                            if take_max { best } else { sum / denom };
                    }
                }
            }
        }
    }
    (out, [n_items, ch, out_d, out_h, out_w])
}

/// Naive triple-loop matrix product: a is n×k, b is k×m.
pub fn matmul_direct(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    assert_eq!(a.len(), n * k);
    assert_eq!(b.len(), k * m);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a[i * k + p] * b[p * m + j];
            }
            out[i * m + j] = acc;
        }
    }
    out
}

/// Trilinear resampling of a D×H×W scalar grid onto a new voxel spacing.
///
/// Output extents are `round(extent * spacing / target)` clamped to at least
/// one voxel; samples are taken at voxel centers and clamp to the edge.
pub fn resample_direct(
    data: &[f64],
    extents: [usize; 3],
    spacing: [f64; 3],
    target: [f64; 3],
) -> (Vec<f64>, [usize; 3]) {
    let mut out_extents = [0usize; 3];
    for a in 0..3 {
        out_extents[a] = (((extents[a] as f64) * spacing[a] / target[a]).round() as usize).max(1);
    }
    let [d, h, w] = extents;
    let value = |z: usize, y: usize, x: usize| data[(z * h + y) * w + x];

    let mut out = Vec::with_capacity(out_extents.iter().product());
    for oz in 0..out_extents[0] {
        for oy in 0..out_extents[1] {
            for ox in 0..out_extents[2] {
                let idx = [oz, oy, ox];
                let mut src = [0.0f64; 3];
                for a in 0..3 {
                    let phys = (idx[a] as f64 + 0.5) * target[a];
                    let u = phys / spacing[a] - 0.5;
                    src[a] = u.clamp(0.0, (extents[a] - 1) as f64);
                }
                let z0 = src[0].floor() as usize;
                let y0 = src[1].floor() as usize;
                let x0 = src[2].floor() as usize;
                let z1 = (z0 + 1).min(d - 1);
                let y1 = (y0 + 1).min(h - 1);
                let x1 = (x0 + 1).min(w - 1);
                let fz = src[0] - z0 as f64;
                let fy = src[1] - y0 as f64;
                let fx = src[2] - x0 as f64;

                let mut acc = 0.0;
                acc += value(z0, y0, x0) * (1.0 - fz) * (1.0 - fy) * (1.0 - fx);
                acc += value(z0, y0, x1) * (1.0 - fz) * (1.0 - fy) * fx;
                acc += value(z0, y1, x0) * (1.0 - fz) * fy * (1.0 - fx);
                acc += value(z0, y1, x1) * (1.0 - fz) * fy * fx;
                acc += value(z1, y0, x0) * fz * (1.0 - fy) * (1.0 - fx);
                acc += value(z1, y0, x1) * fz * (1.0 - fy) * fx;
                acc += value(z1, y1, x0) * fz * fy * (1.0 - fx);
                acc += value(z1, y1, x1) * fz * fy * fx;
                out.push(acc);
            }
        }
    }
    (out, out_extents)
}

/// Two-pass Pearson correlation straight from the defining formula.
pub fn pearson_direct(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den_a = 0.0;
    let mut den_b = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        num += (x - mean_a) * (y - mean_b);
        den_a += (x - mean_a) * (x - mean_a);
        den_b += (y - mean_b) * (y - mean_b);
    }
    num / (den_a * den_b).sqrt()
}

/// Nearest-rank percentile: the value at 1-based index ceil(q/100 * n) of the
/// ascending sort.
pub fn percentile_nearest_rank_direct(data: &[f64], q: f64) -> f64 {
    assert!(!data.is_empty());
    let mut sorted = data.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = ((q / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Survival function of the chi-square distribution with one degree of
/// freedom, evaluated by Simpson quadrature of the normal tail.
///
/// Uses S(x) = 2 P(Z > sqrt(x)) for Z standard normal; the tail integral is
/// truncated where the integrand is far below double precision.
pub fn chi2_sf_1df_quadrature(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let lo = x.sqrt();
    let hi = lo + 42.0;
    let steps = 400_000; // even
    let step = (hi - lo) / steps as f64;
    let pdf = |u: f64| (-0.5 * u * u).exp() / (2.0 * core::f64::consts::PI).sqrt();
    let mut acc = pdf(lo) + pdf(hi);
    for i in 1..steps {
        let u = lo + i as f64 * step;
        acc += pdf(u) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    (2.0 * acc * step / 3.0).clamp(0.0, 1.0)
}

/// Exact binomial coefficient through u128 arithmetic (valid to n = 120).
pub fn binomial_u128(n: u64, k: u64) -> u128 {
    assert!(n <= 120);
    let k = k.min(n - k.min(n));
    let mut num: u128 = 1;
    for i in 0..k {
        num = num * (n - i) as u128 / (i + 1) as u128;
    }
    num
}

/// Two-sided exact sign-test p-value by direct enumeration:
/// min(1, 2 * P(X <= min(b, c))) for X ~ Binomial(b + c, 1/2).
pub fn mcnemar_exact_p_enumeration(b: u64, c: u64) -> f64 {
    let n = b + c;
    if n == 0 {
        return 1.0;
    }
    let m = b.min(c);
    let mut tail: u128 = 0;
    for k in 0..=m {
        tail += binomial_u128(n, k);
    }
    let p = 2.0 * (tail as f64) / (2.0f64.powi(n as i32));
    p.min(1.0)
}

/// Maximum elementwise discrepancy |a - b| / max(1, |b|).
pub fn max_unit_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / y.abs().max(1.0))
        .fold(0.0, f64::max)
}
