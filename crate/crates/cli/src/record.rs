use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;

use crate::config::{file_sha256, ExperimentConfig};

pub const VERSION: &str = concat!("spdec-cli ", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Debug, Serialize)]
pub struct OutputEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// What a run was asked to do and what it wrote.
#[derive(Clone, Debug, Serialize)]
pub struct RunRecord {
    pub version: &'static str,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub elapsed_seconds: f64,
    pub outputs: Vec<OutputEntry>,
    #[serde(skip_serializing_if = "serde_json::Value::is_null")]
    pub summary: serde_json::Value,
}

impl RunRecord {
    /// Hashes `files` (relative to `dir`) and records them.
    pub fn new(cfg: &ExperimentConfig, started: Instant, dir: &Path, files: &[&str], summary: serde_json::Value) -> Result<Self> {
        let outputs = files
            .iter()
            .map(|f| {
                let p = dir.join(f);
                Ok(OutputEntry {
                    path: f.to_string(),
                    sha256: file_sha256(&p)?,
                    bytes: std::fs::metadata(&p)?.len(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(RunRecord {
            version: VERSION,
            config_hash: cfg.hash(),
            config: cfg.clone(),
            elapsed_seconds: started.elapsed().as_secs_f64(),
            outputs,
            summary,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }
}
