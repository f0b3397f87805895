//! Single-file NIfTI-1 reader and writer, uncompressed `.nii` only.
//!
//! Reads signed 16-bit integer, 32-bit float, and 64-bit float payloads,
//! applying scl_slope/scl_inter when the slope is nonzero. Writes 32-bit
//! float, little-endian, vox_offset 352. Orientation handling is limited
//! to axis-aligned voxel spacing from pixdim; no affines, no gzip.

use anyhow::{Context, Result};
use phinet_core::volume::Volume;
use std::fs;
use std::path::Path;

use crate::fail;

const HEADER_LEN: usize = 348;
const VOX_OFFSET: usize = 352;

const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;

fn i16_at(buf: &[u8], off: usize) -> i16 {
    i16::from_le_bytes([buf[off], buf[off + 1]])
}

fn i32_at(buf: &[u8], off: usize) -> i32 {
    i32::from_le_bytes(buf[off..off + 4].try_into().unwrap())
}

fn f32_at(buf: &[u8], off: usize) -> f32 {
    f32::from_le_bytes(buf[off..off + 4].try_into().unwrap())
}

pub fn read_nifti(path: &Path) -> Result<Volume> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if bytes.len() < HEADER_LEN {
        return Err(fail::data(format!(
            "{}: file shorter than the {HEADER_LEN}-byte header",
            path.display()
        )));
    }
    let sizeof_hdr = i32_at(&bytes, 0);
    if sizeof_hdr != HEADER_LEN as i32 {
        return Err(fail::data(format!(
            "{}: sizeof_hdr {sizeof_hdr}, expected {HEADER_LEN} (not NIfTI-1 or wrong endianness)",
            path.display()
        )));
    }
    let magic = &bytes[344..348];
    if magic == b"ni1\0" {
        return Err(fail::data(format!(
            "{}: detached-header variant (magic \"ni1\") is not supported, need single-file \"n+1\"",
            path.display()
        )));
    }
    if magic != b"n+1\0" {
        return Err(fail::data(format!("{}: bad magic {magic:?}", path.display())));
    }

    let dim0 = i16_at(&bytes, 40);
    if !(1..=7).contains(&dim0) {
        return Err(fail::data(format!("{}: dim[0] = {dim0}", path.display())));
    }
    let mut dims = [1usize; 7];
    for (a, d) in dims.iter_mut().enumerate().take(dim0 as usize) {
        let v = i16_at(&bytes, 40 + 2 * (a + 1));
        if v < 1 {
            return Err(fail::data(format!(
                "{}: dim[{}] = {v}",
                path.display(),
                a + 1
            )));
        }
        *d = v as usize;
    }
    if dims[3..].iter().any(|&d| d != 1) {
        return Err(fail::data(format!(
            "{}: more than three nontrivial dimensions",
            path.display()
        )));
    }
    // NIfTI stores the fastest-varying axis first; Volume is [D,H,W].
    let extents = [dims[2], dims[1], dims[0]];

    let datatype = i16_at(&bytes, 70);
    let bitpix = i16_at(&bytes, 72);
    let bytes_per = match (datatype, bitpix) {
        (DT_INT16, 16) => 2,
        (DT_FLOAT32, 32) => 4,
        (DT_FLOAT64, 64) => 8,
        _ => {
            return Err(fail::data(format!(
                "{}: unsupported datatype {datatype} / bitpix {bitpix}",
                path.display()
            )))
        }
    };

    let mut spacing = [0.0f64; 3];
    for a in 0..3 {
        let p = f32_at(&bytes, 76 + 4 * (a + 1)) as f64;
        if p <= 0.0 || !p.is_finite() {
            return Err(fail::data(format!(
                "{}: non-positive pixdim[{}] = {p}",
                path.display(),
                a + 1
            )));
        }
        // pixdim follows dim's axis order
        spacing[2 - a] = p;
    }

    let vox_offset = f32_at(&bytes, 108);
    if !(vox_offset.is_finite() && vox_offset >= HEADER_LEN as f32 && vox_offset.fract() == 0.0) {
        return Err(fail::data(format!(
            "{}: bad vox_offset {vox_offset}",
            path.display()
        )));
    }
    let offset = vox_offset as usize;
    let n: usize = extents.iter().product();
    if bytes.len() != offset + n * bytes_per {
        return Err(fail::data(format!(
            "{}: payload is {} bytes, header promises {} voxels of {} bytes at offset {offset}",
            path.display(),
            bytes.len().saturating_sub(offset),
            n,
            bytes_per
        )));
    }

    let slope = f32_at(&bytes, 112);
    let inter = f32_at(&bytes, 116);
    let payload = &bytes[offset..];
    // identity transform skipped outright so float payloads round-trip
    // bitwise (x * 1.0 + 0.0 would rewrite -0.0)
    let scaling = slope != 0.0 && (slope != 1.0 || inter != 0.0);
    let raw_to_stored = |raw: f32| -> f32 {
        if scaling {
            raw * slope + inter
        } else {
            raw
        }
    };
    let mut data = Vec::with_capacity(n);
    match datatype {
        DT_INT16 => {
            for c in payload.chunks_exact(2) {
                data.push(raw_to_stored(i16::from_le_bytes([c[0], c[1]]) as f32));
            }
        }
        DT_FLOAT32 => {
            for c in payload.chunks_exact(4) {
                data.push(raw_to_stored(f32::from_le_bytes(c.try_into().unwrap())));
            }
        }
        _ => {
            for c in payload.chunks_exact(8) {
                data.push(raw_to_stored(f64::from_le_bytes(c.try_into().unwrap()) as f32));
            }
        }
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(fail::data(format!(
            "{}: payload contains non-finite values",
            path.display()
        )));
    }
    Volume::new(extents, spacing, data).map_err(fail::from_core)
}

pub fn write_nifti(volume: &Volume, path: &Path) -> Result<()> {
    let [d, h, w] = volume.extents();
    if d > i16::MAX as usize || h > i16::MAX as usize || w > i16::MAX as usize {
        return Err(fail::data(format!(
            "extents {:?} overflow the NIfTI-1 dim field",
            volume.extents()
        )));
    }
    let sp = volume.spacing();
    let mut buf = Vec::with_capacity(VOX_OFFSET + volume.len() * 4);
    buf.resize(HEADER_LEN, 0u8);

    buf[0..4].copy_from_slice(&(HEADER_LEN as i32).to_le_bytes());
    let dims: [i16; 8] = [3, w as i16, h as i16, d as i16, 1, 1, 1, 1];
    for (a, v) in dims.iter().enumerate() {
        buf[40 + 2 * a..42 + 2 * a].copy_from_slice(&v.to_le_bytes());
    }
    buf[70..72].copy_from_slice(&DT_FLOAT32.to_le_bytes());
    buf[72..74].copy_from_slice(&32i16.to_le_bytes());
    let pixdims: [f32; 8] = [
        1.0,
        sp[2] as f32,
        sp[1] as f32,
        sp[0] as f32,
        1.0,
        1.0,
        1.0,
        1.0,
    ];
    for (a, v) in pixdims.iter().enumerate() {
        buf[76 + 4 * a..80 + 4 * a].copy_from_slice(&v.to_le_bytes());
    }
    buf[108..112].copy_from_slice(&(VOX_OFFSET as f32).to_le_bytes());
    buf[112..116].copy_from_slice(&1.0f32.to_le_bytes());
    buf[116..120].copy_from_slice(&0.0f32.to_le_bytes());
    buf[344..348].copy_from_slice(b"n+1\0");
    // no header extensions
    buf.extend_from_slice(&[0u8; VOX_OFFSET - HEADER_LEN]);

    for &v in volume.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).with_context(|| format!("writing {}", path.display()))
}
