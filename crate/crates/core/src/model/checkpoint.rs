//! Binary checkpoint format.
//!
//! ```text
//! "EMOC"                      magic, 4 bytes
//! u16                         format version
//! u32 + bytes                 config as UTF-8 JSON, length-prefixed
//! repeated until end of file:
//!   u16 + bytes               tensor name, UTF-8
//!   u8                        rank
//!   u32 × rank                dimensions
//!   f32 × product(dims)       row-major values
//! ```
//!
//! All integers and floats are little-endian. Records are written in name
//! order, so identical weights always produce identical bytes.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use super::config::ModelConfig;
use super::params::{param_shapes, Params};
use crate::autodiff::Tensor;

pub const MAGIC: &[u8; 4] = b"EMOC";
pub const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("not a checkpoint: bad magic {0:?}")]
    BadMagic(Vec<u8>),
    #[error("unsupported checkpoint version {0} (expected {VERSION})")]
    UnsupportedVersion(u16),
    #[error("corrupt header: {0}")]
    CorruptHeader(String),
    #[error("truncated tensor record {record}{}: {what}", name.as_ref().map(|n| format!(" ({n})")).unwrap_or_default())]
    Truncated {
        record: usize,
        name: Option<String>,
        what: String,
    },
    #[error("tensor record {record}: name is not valid UTF-8")]
    InvalidName { record: usize },
    #[error("unknown tensor {0:?}")]
    UnknownTensor(String),
    #[error("tensor {0:?} appears twice")]
    DuplicateTensor(String),
    #[error("missing tensor {0:?}")]
    MissingTensor(String),
    #[error("tensor {name:?}: shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("tensor {name:?} cannot be stored: {what}")]
    Unwritable { name: String, what: String },
}

/// Serializes `params` and `config`; values are narrowed to `f32`.
pub fn to_bytes(params: &Params, config: &ModelConfig) -> Result<Vec<u8>, CheckpointError> {
    let json = serde_json::to_string(config).expect("config serializes");
    let mut out = Vec::with_capacity(16 + json.len() + params.num_values() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(json.as_bytes());
    for (name, t) in params.iter() {
        let unwritable = |what: &str| CheckpointError::Unwritable {
            name: name.to_string(),
            what: what.to_string(),
        };
        let name_len = u16::try_from(name.len()).map_err(|_| unwritable("name too long"))?;
        let rank = u8::try_from(t.rank()).map_err(|_| unwritable("rank above 255"))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(rank);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| unwritable("dimension above u32"))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_checkpoint(
    params: &Params,
    config: &ModelConfig,
    path: impl AsRef<Path>,
) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    let bytes = to_bytes(params, config)?;
    std::fs::write(path, bytes).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let slice = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(slice)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

/// Parses a checkpoint, checking every tensor against the embedded config.
pub fn from_bytes(bytes: &[u8]) -> Result<(Params, ModelConfig), CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r
        .take(4)
        .ok_or_else(|| CheckpointError::BadMagic(bytes.to_vec()))?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic.to_vec()));
    }
    let version = r
        .u16()
        .ok_or_else(|| CheckpointError::CorruptHeader("missing version".into()))?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let json_len = r
        .u32()
        .ok_or_else(|| CheckpointError::CorruptHeader("missing config length".into()))?;
    let json = r.take(json_len as usize).ok_or_else(|| {
        CheckpointError::CorruptHeader(format!(
            "config length {json_len} exceeds the {} remaining bytes",
            r.remaining()
        ))
    })?;
    let config: ModelConfig = serde_json::from_slice(json)
        .map_err(|e| CheckpointError::CorruptHeader(format!("config JSON: {e}")))?;
    config
        .validate()
        .map_err(|e| CheckpointError::CorruptHeader(e.to_string()))?;

    let expected: BTreeMap<String, Vec<usize>> = param_shapes(&config).into_iter().collect();
    let mut tensors = BTreeMap::new();
    let mut record = 0;
    while r.remaining() > 0 {
        let truncated = |name: Option<&str>, what: &str| CheckpointError::Truncated {
            record,
            name: name.map(str::to_string),
            what: what.to_string(),
        };
        let name_len = r.u16().ok_or_else(|| truncated(None, "name length"))?;
        let name_bytes = r
            .take(name_len as usize)
            .ok_or_else(|| truncated(None, "name"))?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|_| CheckpointError::InvalidName { record })?
            .to_string();
        let rank = r.u8().ok_or_else(|| truncated(Some(&name), "rank"))?;
        let mut shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            let d = r.u32().ok_or_else(|| truncated(Some(&name), "dimensions"))?;
            shape.push(d as usize);
        }
        let Some(want) = expected.get(&name) else {
            return Err(CheckpointError::UnknownTensor(name));
        };
        if *want != shape {
            return Err(CheckpointError::ShapeMismatch {
                name,
                expected: want.clone(),
                found: shape,
            });
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 4).ok_or_else(|| {
            truncated(
                Some(&name),
                &format!("need {} data bytes, {} remain", numel * 4, r.remaining()),
            )
        })?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        let tensor = Tensor::new(shape, data).map_err(|e| truncated(Some(&name), &e.to_string()))?;
        if tensors.insert(name.clone(), tensor).is_some() {
            return Err(CheckpointError::DuplicateTensor(name));
        }
        record += 1;
    }
    if let Some(missing) = expected.keys().find(|k| !tensors.contains_key(*k)) {
        return Err(CheckpointError::MissingTensor(missing.clone()));
    }
    Ok((Params::from_map(tensors), config))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Params, ModelConfig), CheckpointError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_bytes(&bytes)
}
