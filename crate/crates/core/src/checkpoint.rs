//! Versioned little-endian binary checkpoints.
//!
//! Layout: magic `NFTCKPT\0`, `u32` version, `u64` length + UTF-8 TOML of the
//! [`ModelConfig`], `u64` parameter count, then per parameter: `u32` id length
//! + id bytes, `u32` rank, `u64` per dimension, `f64` values.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, NftModel};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"NFTCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn to_bytes(model: &NftModel) -> Result<Vec<u8>> {
    let config = toml::to_string(model.config()).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let params = model.params();
    let mut out = Vec::with_capacity(64 + config.len() + 8 * model.parameter_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u64).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&(p.id().len() as u32).to_le_bytes());
        out.extend_from_slice(p.id().as_bytes());
        out.extend_from_slice(&(p.shape().len() as u32).to_le_bytes());
        for &d in p.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Checkpoint("unexpected end of file".into()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("length overflows usize".into()))
    }

    fn text(&mut self, n: usize) -> Result<&'a str> {
        std::str::from_utf8(self.take(n)?).map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<NftModel> {
    let mut r = Reader { buf: bytes };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let n = r.len()?;
    let config: ModelConfig = toml::from_str(r.text(n)?).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut model = NftModel::new(config)?;
    let count = r.len()?;
    let mut params = model.params_mut();
    if count != params.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} parameters, found {count}",
            params.len()
        )));
    }
    for p in params.iter_mut() {
        let n = r.u32()? as usize;
        let id = r.text(n)?;
        if id != p.id() {
            return Err(Error::Checkpoint(format!("expected parameter `{}`, found `{id}`", p.id())));
        }
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
        if shape != p.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter `{id}` has shape {shape:?}, expected {:?}",
                p.shape()
            )));
        }
        let len: usize = shape.iter().product();
        let raw = r.take(len * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        p.assign(Tensor::new(shape, data).map_err(|_| Error::Checkpoint(format!("non-finite value in `{id}`")))?)?;
    }
    if !r.buf.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", r.buf.len())));
    }
    drop(params);
    Ok(model)
}

pub fn save(model: &NftModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(model)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<NftModel> {
    let path = path.as_ref();
    from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
