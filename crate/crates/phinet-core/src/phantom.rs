//! Synthetic contrast phantoms: three nested ellipsoid compartments whose
//! mean intensities follow the per-class orderings that distinguish MR
//! contrasts, with optional enhancing blobs, a smooth multiplicative bias
//! field, and additive Gaussian noise. Everything is a pure function of
//! (class, spec, seed).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::CoreError;
use crate::volume::Volume;

pub const MASK_BACKGROUND: u8 = 0;
pub const MASK_CSF: u8 = 1;
pub const MASK_GM: u8 = 2;
pub const MASK_WM: u8 = 3;
pub const MASK_BLOB: u8 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "UPPERCASE"))]
pub enum ContrastClass {
    T1,
    T2,
    Flair,
}

impl ContrastClass {
    pub const ALL: [ContrastClass; 3] = [ContrastClass::T1, ContrastClass::T2, ContrastClass::Flair];

    pub fn name(self) -> &'static str {
        match self {
            ContrastClass::T1 => "T1",
            ContrastClass::T2 => "T2",
            ContrastClass::Flair => "FLAIR",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "T1" => Some(ContrastClass::T1),
            "T2" => Some(ContrastClass::T2),
            "FLAIR" => Some(ContrastClass::Flair),
            _ => None,
        }
    }

    /// Compartment means as (CSF, GM, WM).
    pub fn tissue_means(self) -> (f64, f64, f64) {
        match self {
            ContrastClass::T1 => (0.25, 0.60, 0.90),
            ContrastClass::T2 => (0.95, 0.55, 0.30),
            ContrastClass::Flair => (0.06, 0.85, 0.60),
        }
    }
}

/// Recovers the class from measured compartment means, or None when no
/// ordering matches. The three orderings are mutually exclusive, which is
/// what makes the classification task well-posed.
pub fn class_from_means(csf: f64, gm: f64, wm: f64) -> Option<ContrastClass> {
    if wm > gm && gm > csf {
        Some(ContrastClass::T1)
    } else if csf > gm && gm > wm {
        Some(ContrastClass::T2)
    } else if gm > wm && wm > csf {
        Some(ContrastClass::Flair)
    } else {
        None
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct PhantomSpec {
    /// Cube edge in voxels.
    pub extent: usize,
    /// Isotropic voxel spacing in mm.
    pub spacing: f64,
    /// Additive Gaussian noise standard deviation.
    pub noise_sigma: f64,
    /// Peak deviation of the multiplicative bias field, at most 0.2.
    pub bias_amplitude: f64,
    /// Relative jitter of the ellipsoid semi-axes.
    pub axis_jitter: f64,
    /// Center displacement as a fraction of the extent.
    pub center_jitter: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            extent: 32,
            spacing: 2.0,
            noise_sigma: 0.04,
            bias_amplitude: 0.12,
            axis_jitter: 0.12,
            center_jitter: 0.06,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<(), CoreError> {
        if self.extent < 12 {
            return Err(CoreError::InvalidConfig(format!(
                "extent {} too small to nest three compartments",
                self.extent
            )));
        }
        if !self.spacing.is_finite() || self.spacing <= 0.0 {
            return Err(CoreError::InvalidConfig("spacing must be positive".into()));
        }
        if self.noise_sigma < 0.0 || self.bias_amplitude < 0.0 {
            return Err(CoreError::InvalidConfig(
                "noise and bias amplitudes must be non-negative".into(),
            ));
        }
        if self.bias_amplitude > 0.2 {
            return Err(CoreError::InvalidConfig(
                "bias amplitude above 0.2 would endanger the intensity orderings".into(),
            ));
        }
        if !(0.0..0.25).contains(&self.axis_jitter) || !(0.0..0.25).contains(&self.center_jitter) {
            return Err(CoreError::InvalidConfig(
                "jitter fractions must lie in [0, 0.25)".into(),
            ));
        }
        // adjacent compartment means must stay at least 3 noise sigmas apart
        let mut min_gap = f64::INFINITY;
        for class in ContrastClass::ALL {
            let (csf, gm, wm) = class.tissue_means();
            let mut v = [csf, gm, wm];
            v.sort_unstable_by(f64::total_cmp);
            min_gap = min_gap.min(v[1] - v[0]).min(v[2] - v[1]);
        }
        if self.noise_sigma * 3.0 > min_gap {
            return Err(CoreError::InvalidConfig(format!(
                "noise sigma {} erases the smallest compartment margin {min_gap}",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

pub struct GeneratedPhantom {
    pub volume: Volume,
    /// Per-voxel compartment labels, same layout as the volume data.
    pub mask: Vec<u8>,
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a per-sample seed from a base seed and two stream coordinates
/// (typically class index and sample index).
pub fn mix_seed(base: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base ^ splitmix64(stream)) ^ index)
}

struct Ellipsoid {
    center: [f64; 3],
    semi_axes: [f64; 3],
}

impl Ellipsoid {
    fn contains(&self, p: [f64; 3]) -> bool {
        let mut q = 0.0;
        for ((&x, &c), &r) in p.iter().zip(&self.center).zip(&self.semi_axes) {
            let t = (x - c) / r;
            q += t * t;
        }
        q <= 1.0
    }
}

/// Enhancement blobs glow well above the brightest tissue so they survive
/// the worst-case bias attenuation.
const BLOB_GAIN: f64 = 1.6;

pub fn generate_phantom(
    class: ContrastClass,
    post_contrast: bool,
    spec: &PhantomSpec,
    seed: u64,
) -> Result<GeneratedPhantom, CoreError> {
    spec.validate()?;
    let e = spec.extent;
    let ef = e as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    fn jit(rng: &mut ChaCha8Rng, mag: f64) -> f64 {
        1.0 + mag * rng.gen_range(-1.0..1.0)
    }
    let mut center = [0.0f64; 3];
    for c in &mut center {
        *c = ef / 2.0 + spec.center_jitter * ef * rng.gen_range(-1.0..1.0);
    }
    let mut outer_ax = [0.0f64; 3];
    for a in &mut outer_ax {
        *a = 0.42 * ef * jit(&mut rng, spec.axis_jitter);
    }
    let mut middle_ax = [0.0f64; 3];
    for (m, o) in middle_ax.iter_mut().zip(outer_ax) {
        *m = o * 0.82 * jit(&mut rng, spec.axis_jitter / 2.0);
    }
    let mut core_ax = [0.0f64; 3];
    for (c, m) in core_ax.iter_mut().zip(middle_ax) {
        *c = m * 0.62 * jit(&mut rng, spec.axis_jitter / 2.0);
    }
    let outer = Ellipsoid {
        center,
        semi_axes: outer_ax,
    };
    let middle = Ellipsoid {
        center,
        semi_axes: middle_ax,
    };
    let core_c = Ellipsoid {
        center,
        semi_axes: core_ax,
    };

    // low-order polynomial bias field over normalized coordinates in [-1, 1],
    // scaled so its peak magnitude is exactly the configured amplitude
    let coeffs: [f64; 9] = core::array::from_fn(|_| rng.gen_range(-1.0..1.0));
    let coeff_norm: f64 = coeffs.iter().map(|c| libm::fabs(*c)).sum::<f64>().max(1e-9);
    let bias_at = |p: [f64; 3]| -> f64 {
        let x = 2.0 * p[2] / ef - 1.0;
        let y = 2.0 * p[1] / ef - 1.0;
        let z = 2.0 * p[0] / ef - 1.0;
        let g = coeffs[0] * x
            + coeffs[1] * y
            + coeffs[2] * z
            + coeffs[3] * x * y
            + coeffs[4] * x * z
            + coeffs[5] * y * z
            + coeffs[6] * x * x
            + coeffs[7] * y * y
            + coeffs[8] * z * z;
        1.0 + spec.bias_amplitude * g / coeff_norm
    };

    let mut blobs: Vec<Ellipsoid> = Vec::new();
    if post_contrast {
        let count = rng.gen_range(2..=4usize);
        for _ in 0..count {
            let r = ef * rng.gen_range(0.07..0.095);
            // rejection-sample a center inside the brain (middle compartment)
            let mut c = center;
            for _ in 0..200 {
                let cand: [f64; 3] = core::array::from_fn(|a| {
                    middle.center[a] + middle.semi_axes[a] * rng.gen_range(-0.8..0.8)
                });
                if middle.contains(cand) {
                    c = cand;
                    break;
                }
            }
            blobs.push(Ellipsoid {
                center: c,
                semi_axes: [r; 3],
            });
        }
    }

    let (csf, gm, wm) = class.tissue_means();
    let brightest = csf.max(gm).max(wm);
    let n = e * e * e;
    let mut mask = vec![MASK_BACKGROUND; n];
    let mut data = vec![0.0f32; n];
    let mut idx = 0;
    for z in 0..e {
        for y in 0..e {
            for x in 0..e {
                let p = [z as f64 + 0.5, y as f64 + 0.5, x as f64 + 0.5];
                let label = if blobs.iter().any(|b| b.contains(p)) {
                    MASK_BLOB
                } else if core_c.contains(p) {
                    MASK_WM
                } else if middle.contains(p) {
                    MASK_GM
                } else if outer.contains(p) {
                    MASK_CSF
                } else {
                    MASK_BACKGROUND
                };
                let base = match label {
                    MASK_BLOB => brightest * BLOB_GAIN,
                    MASK_WM => wm,
                    MASK_GM => gm,
                    MASK_CSF => csf,
                    _ => 0.0,
                };
                let noise: f64 = if spec.noise_sigma > 0.0 {
                    let g: f64 = rng.sample(StandardNormal);
                    g * spec.noise_sigma
                } else {
                    0.0
                };
                mask[idx] = label;
                data[idx] = (base * bias_at(p) + noise) as f32;
                idx += 1;
            }
        }
    }

    if post_contrast && !mask.contains(&MASK_BLOB) {
        return Err(CoreError::InvalidData(
            "post-contrast phantom produced no enhancing voxels".into(),
        ));
    }

    let volume = Volume::new([e; 3], [spec.spacing; 3], data)?;
    Ok(GeneratedPhantom { volume, mask })
}

/// Mean intensity per compartment label (CSF, GM, WM); None when a
/// compartment is empty.
pub fn compartment_means(volume: &Volume, mask: &[u8]) -> [Option<f64>; 3] {
    let mut sums = [0.0f64; 3];
    let mut counts = [0usize; 3];
    for (&v, &m) in volume.data().iter().zip(mask) {
        if (MASK_CSF..=MASK_WM).contains(&m) {
            let k = (m - MASK_CSF) as usize;
            sums[k] += v as f64;
            counts[k] += 1;
        }
    }
    core::array::from_fn(|k| (counts[k] > 0).then(|| sums[k] / counts[k] as f64))
}
