// Binary checkpoint container:
//
//   magic "VCLFCKPT" | version u32 | config_len u64 | config JSON
//   | tensor_count u64 | per tensor: name_len u32, name, ndim u32,
//     dims u64 × ndim, data f64 × numel
//
// All integers and floats little-endian.

use std::io::Write;
use std::path::Path;

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"VCLFCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let bytes = encode(model)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|reason| match reason {
        DecodeError::Format(r) => Error::format(path, r),
        DecodeError::Model(e) => e,
    })
}

pub(crate) fn encode(model: &Model) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.write_all(CHECKPOINT_MAGIC).ok();
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let cfg = serde_json::to_vec(model.config())?;
    out.extend_from_slice(&(cfg.len() as u64).to_le_bytes());
    out.extend_from_slice(&cfg);
    out.extend_from_slice(&(model.params().len() as u64).to_le_bytes());
    for p in model.params() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        let shape = p.tensor.shape();
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in p.tensor.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub(crate) enum DecodeError {
    Format(String),
    Model(Error),
}

impl From<&str> for DecodeError {
    fn from(s: &str) -> Self {
        DecodeError::Format(s.to_string())
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.buf.len() < n {
            return Err("unexpected end of checkpoint".into());
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn len(&mut self) -> Result<usize, DecodeError> {
        let n = self.u64()?;
        usize::try_from(n).map_err(|_| "length field overflows".into())
    }
}

pub(crate) fn decode(bytes: &[u8]) -> Result<Model, DecodeError> {
    let mut r = Reader { buf: bytes };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err("bad magic; not a checkpoint".into());
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(DecodeError::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let cfg_len = r.len()?;
    let config: ModelConfig = serde_json::from_slice(r.take(cfg_len)?)
        .map_err(|e| DecodeError::Format(format!("config: {e}")))?;
    let count = r.len()?;
    let mut tensors = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| DecodeError::from("tensor name is not UTF-8"))?
            .to_string();
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim.min(8));
        for _ in 0..ndim {
            shape.push(r.len()?);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or(DecodeError::from("tensor size overflows"))?;
        let raw = r.take(
            numel
                .checked_mul(8)
                .ok_or(DecodeError::from("tensor size overflows"))?,
        )?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let t = Tensor::new(shape, data).map_err(DecodeError::Model)?;
        tensors.push((name, t));
    }
    if !r.buf.is_empty() {
        return Err("trailing bytes after last tensor".into());
    }
    Model::from_parts(config, tensors).map_err(DecodeError::Model)
}
