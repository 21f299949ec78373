//! QVOL volumes: a JSON header `<stem>.qvol` next to a raw payload
//! `<stem>.raw` of little-endian f32 values, x varying fastest.

use std::fs;
use std::path::{Path, PathBuf};

use quiz_core::Volume;
use serde::{Deserialize, Serialize};

use crate::error::{format_err, IoContext, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    dtype: String,
    order: String,
}

/// Header path for `path`, which may name the header or the bare stem.
pub fn header_path(path: &Path) -> PathBuf {
    path.with_extension("qvol")
}

pub fn payload_path(path: &Path) -> PathBuf {
    path.with_extension("raw")
}

pub fn save_volume(vol: &Volume, path: &Path) -> Result<()> {
    let (hp, pp) = (header_path(path), payload_path(path));
    if let Some(bad) = vol.data().iter().find(|v| !v.is_finite()) {
        return Err(format_err(&hp, format!("refusing to write non-finite intensity {bad}")));
    }
    let header = Header {
        dims: vol.dims(),
        spacing: vol.spacing(),
        origin: vol.origin(),
        dtype: "f32".into(),
        order: "zyx".into(),
    };
    let json = serde_json::to_string(&header).map_err(|e| format_err(&hp, e.to_string()))?;
    let mut bytes = Vec::with_capacity(vol.len() * 4);
    for v in vol.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&pp, bytes).at(&pp)?;
    fs::write(&hp, json).at(&hp)
}

pub fn load_volume(path: &Path) -> Result<Volume> {
    let (hp, pp) = (header_path(path), payload_path(path));
    let text = fs::read_to_string(&hp).at(&hp)?;
    let h: Header = serde_json::from_str(&text).map_err(|e| format_err(&hp, format!("bad header: {e}")))?;
    if h.dtype != "f32" || h.order != "zyx" {
        return Err(format_err(&hp, format!("unsupported dtype/order {}/{}", h.dtype, h.order)));
    }
    let bytes = fs::read(&pp).at(&pp)?;
    let n: usize = h.dims.iter().product();
    if bytes.len() != n * 4 {
        return Err(format_err(
            &pp,
            format!("payload size mismatch: {} bytes for dims {:?} (expected {})", bytes.len(), h.dims, n * 4),
        ));
    }
    let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok(Volume::new(h.dims, h.spacing, h.origin, data)?)
}
