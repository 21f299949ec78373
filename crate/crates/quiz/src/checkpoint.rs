//! Checkpoint archive.
//!
//! Layout: the magic bytes `QZCK`, a little-endian `u32` format version, a
//! little-endian `u64` header length, a UTF-8 JSON header, then every tensor
//! as little-endian f32 in header order. The header holds the model
//! configuration, the name and shape of each tensor, and optional training
//! progress.

use std::fs;
use std::path::Path;

use quiz_core::model::Param;
use quiz_core::{ModelConfig, QuizModel, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{format_err, IoContext, Result};

pub const MAGIC: &[u8; 4] = b"QZCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Iterations completed when the checkpoint was written.
    pub iteration: usize,
    pub stage: u8,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
    meta: Option<CheckpointMeta>,
}

pub fn save_checkpoint(model: &QuizModel<f32>, meta: Option<CheckpointMeta>, path: &Path) -> Result<()> {
    let header = Header {
        config: model.config().clone(),
        tensors: model
            .params()
            .iter()
            .map(|p| TensorEntry { name: p.name.clone(), shape: p.value.shape().to_vec() })
            .collect(),
        meta,
    };
    let json = serde_json::to_vec(&header).map_err(|e| format_err(path, e.to_string()))?;
    let mut out = Vec::with_capacity(16 + json.len() + model.num_parameters() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in model.params() {
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let tmp = path.with_extension("qzck.tmp");
    fs::write(&tmp, out).at(&tmp)?;
    fs::rename(&tmp, path).at(path)
}

pub fn load_checkpoint(path: &Path) -> Result<(QuizModel<f32>, Option<CheckpointMeta>)> {
    let bytes = fs::read(path).at(path)?;
    let bad = |m: &str| format_err(path, m.to_string());
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(format_err(path, format!("unsupported checkpoint version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| format_err(path, format!("bad header: {e}")))?;
    let mut pos = 16 + hlen;
    let mut params = Vec::with_capacity(header.tensors.len());
    for t in header.tensors {
        let n: usize = t.shape.iter().product();
        let raw = bytes.get(pos..pos + 4 * n).ok_or_else(|| bad("truncated tensor data"))?;
        pos += 4 * n;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let value = Tensor::new(&t.shape, data)?;
        params.push(Param { name: t.name, value });
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes after tensor data"));
    }
    Ok((QuizModel::from_params(header.config, params)?, header.meta))
}
