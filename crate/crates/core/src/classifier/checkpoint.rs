//! Checkpoint layout (all integers little-endian):
//!
//! ```text
//! magic    b"CGMP"
//! version  u32 = 1
//! n_sizes  u32
//! sizes    n_sizes x u64     [D, hidden..., C]
//! params   f64 x param_count  per layer: weights row-major (fan_in x fan_out), then bias
//! ```

use std::path::Path;

use super::{Dense, ModelParams};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CGMP";
const VERSION: u32 = 1;

pub fn encode_checkpoint(params: &ModelParams) -> Vec<u8> {
    let sizes = params.sizes();
    let mut out = Vec::with_capacity(12 + 8 * sizes.len() + 8 * params.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(sizes.len() as u32).to_le_bytes());
    for s in sizes {
        out.extend_from_slice(&(s as u64).to_le_bytes());
    }
    for v in params.iter_flat() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Checkpoint(format!("truncated at byte {} (needed {n} more)", self.pos))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Decodes a checkpoint; with `expected_sizes`, rejects any other architecture.
pub fn decode_checkpoint(bytes: &[u8], expected_sizes: Option<&[usize]>) -> Result<ModelParams> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let n = c.u32()? as usize;
    if !(2..=64).contains(&n) {
        return Err(Error::Checkpoint(format!("implausible layer count {n}")));
    }
    let sizes: Vec<usize> = (0..n)
        .map(|_| c.u64().map(|v| v as usize))
        .collect::<Result<_>>()?;
    if let Some(expected) = expected_sizes {
        if expected != sizes.as_slice() {
            return Err(Error::Checkpoint(format!(
                "architecture mismatch: file has {sizes:?}, expected {expected:?}"
            )));
        }
    }
    let mut params = ModelParams::zeros(&sizes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    for Dense { weights, bias } in &mut params.layers {
        for w in weights.iter_mut() {
            *w = c.f64()?;
        }
        for b in bias.iter_mut() {
            *b = c.f64()?;
        }
    }
    if c.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - c.pos
        )));
    }
    Ok(params)
}

pub fn save_checkpoint(path: &Path, params: &ModelParams) -> Result<()> {
    std::fs::write(path, encode_checkpoint(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path, expected_sizes: Option<&[usize]>) -> Result<ModelParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, expected_sizes)
}
