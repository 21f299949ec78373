//! Training configuration files: JSON mirroring [`TrainConfig`].

use std::path::Path;

use quiz_core::train::TrainConfig;

use crate::error::{format_err, IoContext, Result};

pub fn load_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).at(path)?;
    let cfg: TrainConfig = serde_json::from_str(&text).map_err(|e| format_err(path, e.to_string()))?;
    cfg.validate().map_err(|e| format_err(path, e.to_string()))?;
    Ok(cfg)
}

pub fn save_config(cfg: &TrainConfig, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(cfg).map_err(|e| format_err(path, e.to_string()))?;
    std::fs::write(path, json).at(path)
}

/// `QUIZ_DETERMINISTIC=1` requests reproducible output.
pub fn deterministic_mode() -> bool {
    std::env::var("QUIZ_DETERMINISTIC").map(|v| v == "1").unwrap_or(false)
}
