//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SDVT" | u32 version (=1) | u32 config length | UTF-8 JSON config
//! u32 tensor count
//! per tensor: u16 name length | UTF-8 name | u8 ndim | ndim × u64 dims | f32 payload
//! ```

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::config::ViTConfig;
use super::model::ViTModel;
use super::weights::Param;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SDVT";
pub const VERSION: u32 = 1;

pub fn to_bytes(model: &ViTModel) -> Result<Vec<u8>> {
    let config = serde_json::to_vec(&model.config)
        .map_err(|e| Error::invalid(format!("config serialization failed: {e}")))?;
    let mut out = Vec::with_capacity(model.param_count() as usize * 4 + 4096);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    let names = model.weights.names();
    out.extend_from_slice(&(names.len() as u32).to_le_bytes());
    let mut failure = None;
    model.weights.visit(|name, p| {
        if name.len() > u16::MAX as usize || p.shape.len() > u8::MAX as usize {
            failure.get_or_insert_with(|| Error::invalid(format!("tensor {name} cannot be encoded")));
            return;
        }
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(p.shape.len() as u8);
        for &d in &p.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &p.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

pub fn save_checkpoint(model: &ViTModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_bytes(model)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    f.sync_all().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ViTModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail<T>(&self, reason: impl Into<String>) -> Result<T> {
        Err(Error::Format {
            offset: self.pos as u64,
            reason: reason.into(),
        })
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return self.fail(format!(
                "truncated while reading {what}: need {n} bytes, {} left",
                self.buf.len() - self.pos
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Parses a checkpoint. Nothing is returned unless the whole buffer is valid
/// and matches the structure implied by the embedded config.
pub fn from_bytes(bytes: &[u8]) -> Result<ViTModel> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        r.pos = 0;
        return r.fail("bad magic, not an SDVT checkpoint");
    }
    let version = r.u32("version")?;
    if version != VERSION {
        r.pos -= 4;
        return r.fail(format!("unsupported version {version}, expected {VERSION}"));
    }
    let cfg_len = r.u32("config length")? as usize;
    let cfg_start = r.pos;
    let cfg_bytes = r.take(cfg_len, "config")?;
    let config: ViTConfig = match serde_json::from_slice(cfg_bytes) {
        Ok(c) => c,
        Err(e) => {
            r.pos = cfg_start;
            return r.fail(format!("config is not valid JSON: {e}"));
        }
    };
    if let Err(e) = config.validate() {
        r.pos = cfg_start;
        return r.fail(e.to_string());
    }

    let count = r.u32("tensor count")? as usize;
    let mut tensors: HashMap<String, (usize, Param)> = HashMap::with_capacity(count);
    for _ in 0..count {
        let at = r.pos;
        let name_len = r.u16("name length")? as usize;
        let name = match std::str::from_utf8(r.take(name_len, "tensor name")?) {
            Ok(s) => s.to_string(),
            Err(_) => return r.fail("tensor name is not UTF-8"),
        };
        let ndim = r.u8("ndim")? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64("dimension")? as usize);
        }
        let n = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let Some(n) = n.filter(|n| n.checked_mul(4).is_some()) else {
            return r.fail(format!("tensor {name} has an overflowing shape {shape:?}"));
        };
        let payload = r.take(n * 4, "tensor payload")?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if tensors.insert(name.clone(), (at, Param { shape, data })).is_some() {
            r.pos = at;
            return r.fail(format!("duplicate tensor {name}"));
        }
    }
    if r.pos != bytes.len() {
        return r.fail(format!("{} trailing bytes after last tensor", bytes.len() - r.pos));
    }

    let skeleton = ViTModel::skeleton(config)?;
    let mut problem: Option<Error> = None;
    let weights = skeleton.weights.map(|name, expected| match tensors.remove(name) {
        Some((_, p)) if p.shape == expected.shape => p,
        Some((at_, p)) => {
            problem.get_or_insert(Error::Format {
                offset: at_ as u64,
                reason: format!("tensor {name} has shape {:?}, config implies {:?}", p.shape, expected.shape),
            });
            expected.clone()
        }
        None => {
            problem.get_or_insert(Error::Format {
                offset: bytes.len() as u64,
                reason: format!("missing tensor {name}"),
            });
            expected.clone()
        }
    });
    if let Some(e) = problem {
        return Err(e);
    }
    if let Some((name, (at, _))) = tensors.iter().min_by_key(|(_, (at, _))| *at) {
        return Err(Error::Format {
            offset: *at as u64,
            reason: format!("unexpected tensor {name}"),
        });
    }
    Ok(ViTModel {
        config: skeleton.config,
        weights,
    })
}
