//! CLSP: trained parameters with the configuration that shapes them.
//!
//! ```text
//! magic "CLSP" | version u32 | variant id u32
//! config length u32 | config JSON (UTF-8)
//! tensor count u32
//! per tensor: name length u32 | name | rank u32 | extents u32… | f32 values
//! ```
//!
//! All numbers are little-endian. Values are stored at 32-bit.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use clstx_core::models::{ModelConfig, ParameterStore, Variant};
use clstx_core::Tensor;

pub const MAGIC: [u8; 4] = *b"CLSP";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("bad checkpoint: {0}")]
    Format(String),
    #[error("checkpoint truncated: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("checkpoint does not match its configuration: {0}")]
    Mismatch(#[from] clstx_core::Error),
}

pub fn encode(cfg: &ModelConfig, store: &ParameterStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&cfg.variant.id().to_le_bytes());
    let json = serde_json::to_vec(cfg).expect("config serializes");
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (spec, t) in store.specs().iter().zip(store.tensors()) {
        out.extend_from_slice(&(spec.name.len() as u32).to_le_bytes());
        out.extend_from_slice(spec.name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let rest = self.bytes.len() - self.pos;
        if n > rest {
            return Err(CheckpointError::Truncated {
                offset: self.pos,
                needed: n - rest,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<(ModelConfig, ParameterStore), CheckpointError> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(CheckpointError::Format("magic is not \"CLSP\"".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(CheckpointError::Format(format!("unsupported version {version}")));
    }
    let id = c.u32()?;
    let variant = Variant::from_id(id).ok_or_else(|| CheckpointError::Format(format!("unknown variant id {id}")))?;
    let len = c.u32()? as usize;
    let cfg: ModelConfig =
        serde_json::from_slice(c.take(len)?).map_err(|e| CheckpointError::Format(format!("config: {e}")))?;
    if cfg.variant != variant {
        return Err(CheckpointError::Format(format!(
            "header variant {variant} disagrees with config variant {}",
            cfg.variant
        )));
    }
    let count = c.u32()?;
    let mut named = BTreeMap::new();
    for _ in 0..count {
        let n = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(n)?)
            .map_err(|_| CheckpointError::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = c.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(c.u32()? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| CheckpointError::Format(format!("{name}: extents overflow")))?;
        let raw = c.take(
            numel
                .checked_mul(4)
                .ok_or_else(|| CheckpointError::Format("size overflow".into()))?,
        )?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        let t = Tensor::new(&shape, data)?;
        if named.insert(name.clone(), t).is_some() {
            return Err(CheckpointError::Format(format!("duplicate tensor {name}")));
        }
    }
    if c.pos != bytes.len() {
        return Err(CheckpointError::Format(format!(
            "{} trailing bytes",
            bytes.len() - c.pos
        )));
    }
    let store = ParameterStore::from_named(&cfg, named)?;
    Ok((cfg, store))
}

pub fn save(path: &Path, cfg: &ModelConfig, store: &ParameterStore) -> Result<(), CheckpointError> {
    fs::write(path, encode(cfg, store)).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load(path: &Path) -> Result<(ModelConfig, ParameterStore), CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes)
}
