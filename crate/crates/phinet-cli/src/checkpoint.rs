//! Checkpoint file format, little-endian throughout:
//!
//! ```text
//! magic "PHIW" | u32 version | u32 tensor count
//! per tensor:  u32 name length | name UTF-8 | u8 rank | rank x u64 dims | f32 data
//! trailer:     u32 JSON length | JSON (epoch, metrics, seed, config echo)
//! ```
//!
//! Serialization is fully deterministic, so identical training runs produce
//! byte-identical files.

use anyhow::{Context, Result};
use phinet_core::tensor::Tensor;
use phinet_core::train::{CheckpointData, TrailerMeta};
use std::fs;
use std::path::Path;

use crate::fail;

const MAGIC: &[u8; 4] = b"PHIW";
const VERSION: u32 = 1;

pub fn save_checkpoint(ckpt: &CheckpointData, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(ckpt.tensors.len() as u32).to_le_bytes());
    for (name, tensor) in &ckpt.tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(tensor.shape().len() as u8);
        for &d in tensor.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let trailer = serde_json::to_vec(&ckpt.meta).context("encoding checkpoint trailer")?;
    buf.extend_from_slice(&(trailer.len() as u32).to_le_bytes());
    buf.extend_from_slice(&trailer);
    fs::write(path, buf).with_context(|| format!("writing {}", path.display()))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(fail::data(format!(
                "{}: truncated checkpoint ({} bytes missing at offset {})",
                self.path.display(),
                n - (self.buf.len() - self.pos),
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<CheckpointData> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let mut r = Reader { buf: &bytes, pos: 0, path };

    if r.take(4)? != MAGIC {
        return Err(fail::data(format!(
            "{}: not a checkpoint file (bad magic)",
            path.display()
        )));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(fail::data(format!(
            "{}: unsupported checkpoint version {version}",
            path.display()
        )));
    }

    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|e| fail::data(format!("{}: tensor name: {e}", path.display())))?;
        let rank = r.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for c in r.take(n * 4)?.chunks_exact(4) {
            data.push(f32::from_le_bytes(c.try_into().unwrap()));
        }
        let tensor = Tensor::new(shape, data).map_err(fail::from_core)?;
        tensors.push((name, tensor));
    }

    let trailer_len = r.u32()? as usize;
    let trailer = r.take(trailer_len)?;
    let meta: TrailerMeta = serde_json::from_slice(trailer)
        .map_err(|e| fail::data(format!("{}: checkpoint trailer: {e}", path.display())))?;
    if r.pos != bytes.len() {
        return Err(fail::data(format!(
            "{}: {} trailing bytes after the trailer",
            path.display(),
            bytes.len() - r.pos
        )));
    }
    Ok(CheckpointData { tensors, meta })
}
