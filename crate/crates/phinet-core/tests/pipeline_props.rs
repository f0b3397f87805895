//! End-to-end preprocessing properties on synthetic anatomy: the FOV crop
//! removes a neck while keeping the head, and the full chain delivers the
//! normalization and shape contract on phantom batches.

use phinet_core::phantom::{generate_phantom, ContrastClass, PhantomSpec};
use phinet_core::volume::{
    crop_fov, otsu_threshold, percentile_nearest_rank, preprocess_stages, PreprocessConfig, Volume,
};

const HEAD: f32 = 1.0;
const NECK: f32 = 0.6;

/// A bright sphere (head) stacked on a long cylinder of dimmer tissue (neck
/// and shoulders), with the superior direction at high z. Air is zero.
fn head_on_neck(extents: [usize; 3], spacing: f64, head_r: f64) -> Volume {
    let [d, h, w] = extents;
    let cx = w as f64 / 2.0;
    let cy = h as f64 / 2.0;
    let head_cz = d as f64 - head_r - 1.0;
    let mut data = vec![0.0f32; d * h * w];
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let idx = (z * h + y) * w + x;
                let dx = x as f64 + 0.5 - cx;
                let dy = y as f64 + 0.5 - cy;
                let dz = z as f64 + 0.5 - head_cz;
                if dx * dx + dy * dy + dz * dz <= head_r * head_r {
                    data[idx] = HEAD;
                } else if (z as f64) < head_cz - head_r
                    && dx * dx + dy * dy <= (head_r * 0.45).powi(2)
                {
                    data[idx] = NECK;
                }
            }
        }
    }
    Volume::new(extents, [spacing; 3], data).unwrap()
}

#[test]
fn fov_crop_removes_the_neck_and_keeps_the_head() {
    let spacing = 2.0;
    let vol = head_on_neck([96, 40, 40], spacing, 14.0);
    let count = |v: &Volume, level: f32| v.data().iter().filter(|&&x| x == level).count();
    let head_before = count(&vol, HEAD);
    let neck_before = count(&vol, NECK);
    assert!(head_before > 0 && neck_before > 0);
    // tissue (head and neck alike) must sit above the air/tissue threshold
    let thr = otsu_threshold(vol.data());
    assert!(thr < NECK, "threshold {thr} puts the neck in the background");

    // budget sized to the head span, so the crop window is the head
    let budget_mm = 58.0;
    let cropped = crop_fov(&vol, budget_mm).unwrap();
    assert_eq!(
        cropped.extents()[0],
        (budget_mm / spacing) as usize,
        "crop keeps exactly the budget"
    );

    let head_after = count(&cropped, HEAD);
    let lost = head_before.abs_diff(head_after) as f64 / head_before as f64;
    assert!(
        lost <= 0.01,
        "head voxels not preserved: {head_after} of {head_before}"
    );
    let neck_after = count(&cropped, NECK);
    assert!(
        (neck_after as f64) <= 0.05 * neck_before as f64,
        "neck mostly survived: {neck_after} of {neck_before}"
    );
}

#[test]
fn crop_is_a_no_op_when_the_foreground_fits() {
    let vol = head_on_neck([20, 24, 24], 2.0, 8.0);
    let cropped = crop_fov(&vol, 500.0).unwrap();
    assert_eq!(cropped.extents(), vol.extents());
    assert_eq!(cropped.data(), vol.data());
}

#[test]
fn phantom_batch_meets_the_normalization_and_shape_contract() {
    let config = PreprocessConfig::default();
    let spec = PhantomSpec::default();
    let e = config.extent;
    for (i, &class) in ContrastClass::ALL.iter().enumerate() {
        for seed in 0..8u64 {
            let phantom = generate_phantom(class, false, &spec, 1000 + 17 * seed + i as u64)
                .unwrap();
            let (scaled, tensor) = preprocess_stages(&phantom.volume, &config).unwrap();

            let p99 = percentile_nearest_rank(scaled.data(), config.percentile).unwrap();
            assert!(
                (p99 - 1.0).abs() <= 1e-6,
                "{} seed {seed}: p99 = {p99}",
                class.name()
            );
            assert_eq!(tensor.shape(), [1, 1, e, e, e]);
        }
    }
}

#[test]
fn pipeline_is_a_fixed_point_on_conforming_volumes() {
    let config = PreprocessConfig::default();
    let spec = PhantomSpec::default();
    let phantom = generate_phantom(ContrastClass::T2, false, &spec, 4).unwrap();
    let (once, _) = preprocess_stages(&phantom.volume, &config).unwrap();
    let (twice, _) = preprocess_stages(&once, &config).unwrap();
    assert_eq!(once.extents(), twice.extents());
    assert_eq!(once.data(), twice.data(), "second pass altered bytes");
}
