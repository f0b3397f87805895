//! Volume ingestion model and the preprocessing chain: foreground crop on
//! the inferior axis, trilinear resampling to isotropic spacing, nearest-rank
//! percentile normalization, and center pad/crop to a fixed cube.
//!
//! Axis layout is [D, H, W] with W fastest; axis 0 runs inferior to superior
//! (higher index = closer to the crown).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::CoreError;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    extents: [usize; 3],
    spacing: [f64; 3],
    data: Vec<f32>,
}

impl Volume {
    pub fn new(extents: [usize; 3], spacing: [f64; 3], data: Vec<f32>) -> Result<Self, CoreError> {
        let n: usize = extents.iter().product();
        if n == 0 {
            return Err(CoreError::ShapeMismatch("volume has a zero extent".into()));
        }
        if data.len() != n {
            return Err(CoreError::ShapeMismatch(format!(
                "data length {} does not match extents {:?}",
                data.len(),
                extents
            )));
        }
        if spacing.iter().any(|&s| s <= 0.0 || !s.is_finite()) {
            return Err(CoreError::InvalidData(format!(
                "non-positive voxel spacing {spacing:?}"
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::InvalidData(
                "volume contains non-finite intensities".into(),
            ));
        }
        Ok(Volume {
            extents,
            spacing,
            data,
        })
    }

    fn from_parts(extents: [usize; 3], spacing: [f64; 3], data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), extents.iter().product::<usize>());
        Volume {
            extents,
            spacing,
            data,
        }
    }

    pub fn extents(&self) -> [usize; 3] {
        self.extents
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn at(&self, z: usize, y: usize, x: usize) -> f32 {
        let [_, h, w] = self.extents;
        self.data[(z * h + y) * w + x]
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct PreprocessConfig {
    /// Isotropic target spacing in mm.
    pub target_spacing: f64,
    /// Percentile whose value is scaled to 1.0, in (0, 100].
    pub percentile: f64,
    /// Inferior-axis budget in mm measured down from the top of the head.
    pub head_budget_mm: f64,
    /// Output cube edge in voxels.
    pub extent: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            target_spacing: 2.0,
            percentile: 99.0,
            head_budget_mm: 180.0,
            extent: 32,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<(), CoreError> {
        if !self.target_spacing.is_finite() || self.target_spacing <= 0.0 {
            return Err(CoreError::InvalidConfig(
                "target spacing must be positive".into(),
            ));
        }
        if !(self.percentile > 0.0 && self.percentile <= 100.0) {
            return Err(CoreError::InvalidConfig(
                "percentile must lie in (0, 100]".into(),
            ));
        }
        if !self.head_budget_mm.is_finite() || self.head_budget_mm <= 0.0 {
            return Err(CoreError::InvalidConfig(
                "head budget must be positive".into(),
            ));
        }
        if self.extent == 0 {
            return Err(CoreError::InvalidConfig("output extent must be >= 1".into()));
        }
        Ok(())
    }
}

/// Histogram-based Otsu threshold over 256 bins. Returns the lower bound of
/// the foreground class, so the mask is `intensity > threshold`.
pub fn otsu_threshold(data: &[f32]) -> f32 {
    const BINS: usize = 256;
    let mut mn = f64::INFINITY;
    let mut mx = f64::NEG_INFINITY;
    for &v in data {
        let v = v as f64;
        mn = mn.min(v);
        mx = mx.max(v);
    }
    let range = mx - mn;
    if range.is_nan() || range <= 0.0 {
        return mn as f32;
    }
    let width = (mx - mn) / BINS as f64;
    let mut hist = [0u64; BINS];
    for &v in data {
        let b = (((v as f64 - mn) / width) as usize).min(BINS - 1);
        hist[b] += 1;
    }
    let total = data.len() as f64;
    let mut sum_all = 0.0;
    for (b, &h) in hist.iter().enumerate() {
        sum_all += (b as f64 + 0.5) * h as f64;
    }
    let mut w0 = 0.0;
    let mut sum0 = 0.0;
    let mut best_t = 0;
    let mut best_var = -1.0;
    for (t, &h) in hist.iter().enumerate().take(BINS - 1) {
        w0 += h as f64;
        sum0 += (t as f64 + 0.5) * h as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let mu0 = sum0 / w0;
        let mu1 = (sum_all - sum0) / w1;
        let var = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if var > best_var {
            best_var = var;
            best_t = t;
        }
    }
    (mn + (best_t as f64 + 1.0) * width) as f32
}

/// Removes everything below the head-height budget measured down from the
/// superior-most foreground slice (axis 0). Volumes whose foreground span
/// already fits the budget pass through untouched.
pub fn crop_fov(volume: &Volume, budget_mm: f64) -> Result<Volume, CoreError> {
    let thr = otsu_threshold(volume.data());
    let [d, h, w] = volume.extents;
    let mut top = None;
    let mut bottom = None;
    for z in 0..d {
        let slice = &volume.data[z * h * w..(z + 1) * h * w];
        if slice.iter().any(|&v| v > thr) {
            if bottom.is_none() {
                bottom = Some(z);
            }
            top = Some(z);
        }
    }
    let (Some(bottom), Some(top)) = (bottom, top) else {
        return Err(CoreError::InvalidData(
            "empty foreground, nothing to crop around".into(),
        ));
    };
    let budget_vox = ((budget_mm / volume.spacing[0]) as usize).max(1);
    let span = top - bottom + 1;
    if span <= budget_vox {
        return Ok(volume.clone());
    }
    let cut = top + 1 - budget_vox;
    let data = volume.data[cut * h * w..(top + 1) * h * w].to_vec();
    Ok(Volume::from_parts([top + 1 - cut, h, w], volume.spacing, data))
}

/// Resamples onto an arbitrary grid, aligning the physical centers of the
/// two volumes. Samples outside the source clamp to the edge.
pub fn resample_onto(
    volume: &Volume,
    out_extents: [usize; 3],
    out_spacing: [f64; 3],
) -> Result<Volume, CoreError> {
    let offset = core::array::from_fn(|a| {
        let c_in = volume.extents[a] as f64 * volume.spacing[a] / 2.0;
        let c_out = out_extents[a] as f64 * out_spacing[a] / 2.0;
        c_in - c_out
    });
    resample_grid(volume, out_extents, out_spacing, offset)
}

/// Shared interpolation core. Output voxel center j maps to source
/// coordinate ((j + 0.5) * out_spacing + offset) / in_spacing - 0.5;
/// offset zero keeps both grids anchored at the same corner.
fn resample_grid(
    volume: &Volume,
    out_extents: [usize; 3],
    out_spacing: [f64; 3],
    offset: [f64; 3],
) -> Result<Volume, CoreError> {
    if out_extents.contains(&0) {
        return Err(CoreError::ShapeMismatch("degenerate target extents".into()));
    }
    if out_spacing.iter().any(|&s| !s.is_finite() || s <= 0.0) {
        return Err(CoreError::InvalidConfig(
            "non-positive target spacing".into(),
        ));
    }
    let [id, ih, iw] = volume.extents;
    let isp = volume.spacing;
    // per-axis source coordinate of each output voxel center
    let coords: [Vec<f64>; 3] = core::array::from_fn(|a| {
        (0..out_extents[a])
            .map(|j| {
                let u = ((j as f64 + 0.5) * out_spacing[a] + offset[a]) / isp[a] - 0.5;
                u.clamp(0.0, (volume.extents[a] - 1) as f64)
            })
            .collect()
    });
    let mut out = Vec::with_capacity(out_extents.iter().product());
    let src = &volume.data;
    for uz in &coords[0] {
        let z0 = *uz as usize;
        let z1 = (z0 + 1).min(id - 1);
        let fz = uz - z0 as f64;
        for uy in &coords[1] {
            let y0 = *uy as usize;
            let y1 = (y0 + 1).min(ih - 1);
            let fy = uy - y0 as f64;
            for ux in &coords[2] {
                let x0 = *ux as usize;
                let x1 = (x0 + 1).min(iw - 1);
                let fx = ux - x0 as f64;
                let g = |z: usize, y: usize, x: usize| src[(z * ih + y) * iw + x] as f64;
                let c00 = g(z0, y0, x0) * (1.0 - fx) + g(z0, y0, x1) * fx;
                let c01 = g(z0, y1, x0) * (1.0 - fx) + g(z0, y1, x1) * fx;
                let c10 = g(z1, y0, x0) * (1.0 - fx) + g(z1, y0, x1) * fx;
                let c11 = g(z1, y1, x0) * (1.0 - fx) + g(z1, y1, x1) * fx;
                let c0 = c00 * (1.0 - fy) + c01 * fy;
                let c1 = c10 * (1.0 - fy) + c11 * fy;
                out.push((c0 * (1.0 - fz) + c1 * fz) as f32);
            }
        }
    }
    Ok(Volume::from_parts(out_extents, out_spacing, out))
}

/// Resamples to isotropic `target` spacing. Output extents are
/// round(extent * spacing / target), at least 1 per axis. Both grids stay
/// anchored at the same corner so voxel centers share one physical frame;
/// the rounding residual accumulates at the far face rather than being
/// split across both.
pub fn resample_trilinear(volume: &Volume, target: f64) -> Result<Volume, CoreError> {
    if !target.is_finite() || target <= 0.0 {
        return Err(CoreError::InvalidConfig(
            "non-positive target spacing".into(),
        ));
    }
    let out_extents = core::array::from_fn(|a| {
        let e = volume.extents[a] as f64 * volume.spacing[a] / target;
        (libm::round(e) as usize).max(1)
    });
    resample_grid(volume, out_extents, [target; 3], [0.0; 3])
}

/// Nearest-rank percentile: the value at 1-based index ceil(q/100 * n) of
/// the ascending sort.
pub fn percentile_nearest_rank(data: &[f32], q: f64) -> Result<f32, CoreError> {
    if data.is_empty() {
        return Err(CoreError::InvalidData("percentile of empty data".into()));
    }
    if !(q > 0.0 && q <= 100.0) {
        return Err(CoreError::InvalidConfig(
            "percentile must lie in (0, 100]".into(),
        ));
    }
    let mut sorted = data.to_vec();
    sorted.sort_unstable_by(f32::total_cmp);
    let rank = libm::ceil(q / 100.0 * data.len() as f64) as usize;
    Ok(sorted[rank - 1])
}

/// Divides every voxel by the nearest-rank percentile value, making that
/// percentile 1.0. Refuses to scale by a non-positive value.
pub fn intensity_scale(volume: &Volume, q: f64) -> Result<Volume, CoreError> {
    let p = percentile_nearest_rank(volume.data(), q)?;
    if !p.is_finite() || p <= 0.0 {
        return Err(CoreError::InvalidData(format!(
            "percentile value {p} is not positive, refusing to scale"
        )));
    }
    let data = volume.data.iter().map(|&v| v / p).collect();
    Ok(Volume::from_parts(volume.extents, volume.spacing, data))
}

/// Centers the volume in a cube of edge `extent`, zero-padding or cropping
/// each axis symmetrically.
pub fn pad_crop_center(volume: &Volume, extent: usize) -> Result<Volume, CoreError> {
    if extent == 0 {
        return Err(CoreError::InvalidConfig("output extent must be >= 1".into()));
    }
    let [d, h, w] = volume.extents;
    let mut out = vec![0.0f32; extent * extent * extent];
    // per axis: source start and destination start of the copied run
    let run = |in_e: usize| -> (usize, usize, usize) {
        if in_e >= extent {
            ((in_e - extent) / 2, 0, extent)
        } else {
            (0, (extent - in_e) / 2, in_e)
        }
    };
    let (sz, dz, nz) = run(d);
    let (sy, dy, ny) = run(h);
    let (sx, dx, nx) = run(w);
    for z in 0..nz {
        for y in 0..ny {
            let src = ((sz + z) * h + (sy + y)) * w + sx;
            let dst = ((dz + z) * extent + (dy + y)) * extent + dx;
            out[dst..dst + nx].copy_from_slice(&volume.data[src..src + nx]);
        }
    }
    Ok(Volume::from_parts([extent; 3], volume.spacing, out))
}

/// Full chain: crop_fov, resample, percentile scale, center pad/crop. The
/// returned pair is (scaled volume before padding, padded tensor); the first
/// element is what percentile audits run on.
pub fn preprocess_stages(
    volume: &Volume,
    config: &PreprocessConfig,
) -> Result<(Volume, Tensor<f32>), CoreError> {
    config.validate()?;
    let cropped = crop_fov(volume, config.head_budget_mm)?;
    let resampled = resample_trilinear(&cropped, config.target_spacing)?;
    let scaled = intensity_scale(&resampled, config.percentile)?;
    let padded = pad_crop_center(&scaled, config.extent)?;
    let e = config.extent;
    let tensor = Tensor::new(vec![1, 1, e, e, e], padded.into_data())?;
    Ok((scaled, tensor))
}

pub fn preprocess_pipeline(
    volume: &Volume,
    config: &PreprocessConfig,
) -> Result<Tensor<f32>, CoreError> {
    Ok(preprocess_stages(volume, config)?.1)
}

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct ManifestItem {
    pub path: String,
    pub label: usize,
    #[cfg_attr(
        feature = "serde",
        serde(default, skip_serializing_if = "Option::is_none")
    )]
    pub subject: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct DatasetManifest {
    pub classes: Vec<String>,
    pub items: Vec<ManifestItem>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<(), CoreError> {
        if self.classes.len() < 2 {
            return Err(CoreError::InvalidData(
                "manifest needs at least 2 classes".into(),
            ));
        }
        let mut per_class = vec![0usize; self.classes.len()];
        for item in &self.items {
            if item.label >= self.classes.len() {
                return Err(CoreError::InvalidData(format!(
                    "label {} out of range for {} classes ({})",
                    item.label,
                    self.classes.len(),
                    item.path
                )));
            }
            per_class[item.label] += 1;
        }
        if let Some(k) = per_class.iter().position(|&n| n == 0) {
            return Err(CoreError::InvalidData(format!(
                "class {} has no items",
                self.classes[k]
            )));
        }
        for (i, a) in self.items.iter().enumerate() {
            for b in &self.items[i + 1..] {
                if a.path == b.path {
                    return Err(CoreError::InvalidData(format!(
                        "duplicate manifest path {}",
                        a.path
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<usize> {
        self.items.iter().map(|i| i.label).collect()
    }
}
