//! Binary checkpoint encoding.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "DBLRCKPT"
//! version      u32      1
//! config_len   u32      length of the config text
//! config       UTF-8    ModelConfig::to_kv()
//! count        u32      number of tensors
//! per tensor, sorted by name:
//!   name_len   u16
//!   name       UTF-8
//!   ndim       u8
//!   dims       u32 × ndim
//!   data       f32 × product(dims)
//! ```

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::config::ModelConfig;
use super::{check_params, layout};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"DBLRCKPT";
pub const VERSION: u32 = 1;

fn tensor_header_len(name: &str, ndim: usize) -> usize {
    2 + name.len() + 1 + 4 * ndim
}

/// Number of non-payload bytes in a checkpoint for `cfg`.
pub fn header_len(cfg: &ModelConfig) -> Result<usize> {
    let specs = layout(cfg)?;
    let fixed = MAGIC.len() + 4 + 4 + cfg.to_kv().len() + 4;
    Ok(fixed + specs.iter().map(|s| tensor_header_len(&s.name, s.shape.len())).sum::<usize>())
}

pub fn encode(cfg: &ModelConfig, params: &ParamStore<f32>) -> Result<Vec<u8>> {
    check_params(cfg, params)?;
    let config = cfg.to_kv();
    let mut out = Vec::with_capacity(header_len(cfg)? + 4 * params.numel());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        let name_len = u16::try_from(name.len()).map_err(|_| Error::Checkpoint(format!("name too long: {name}")))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.ndim() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated: needed {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }
}

/// Parses a checkpoint and validates it against its embedded config.
pub fn decode(bytes: &[u8]) -> Result<(ModelConfig, ParamStore<f32>)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len()).map_err(|_| Error::Checkpoint("bad magic".into()))? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version} (expected {VERSION})")));
    }
    let config_len = r.u32()? as usize;
    let cfg = ModelConfig::from_kv(&r.string(config_len)?)?;
    let count = r.u32()? as usize;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = r.string(name_len)?;
        let ndim = r.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint(format!("{name}: dimension overflow")))?;
        let payload = r.take(numel.checked_mul(4).ok_or_else(|| Error::Checkpoint("dimension overflow".into()))?)?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        params.insert(name, Tensor::new(&shape, data)?)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    check_params(&cfg, &params).map_err(|e| Error::Checkpoint(format!("does not match its config: {e}")))?;
    Ok((cfg, params))
}
