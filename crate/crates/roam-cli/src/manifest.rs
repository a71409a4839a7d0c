//! The run manifest: an audit record written into the output directory
//! before any long computation starts, then finalized when the run ends.
//! Replaying the recorded config and seed in serial mode reproduces the
//! metrics log byte for byte.

use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    /// Subcommand that produced the run.
    pub command: String,
    /// Version of the binary.
    pub code_version: String,
    /// Master seed of the run.
    pub seed: u64,
    /// Hex hash of the resolved configuration; matches the hash embedded
    /// in every checkpoint this run writes or resumes from.
    pub config_hash: String,
    /// Resolved configuration snapshot.
    pub config: RunConfig,
    /// Files the run intends to produce, relative to the manifest.
    pub outputs: Vec<String>,
    pub started_unix_ms: u64,
    /// Set on the final rewrite once the run completes.
    pub finished_unix_ms: Option<u64>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: RunConfig, outputs: &[&str]) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config_hash: format!("{:016x}", config.config_hash()),
            config,
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
            started_unix_ms: now_unix_ms(),
            finished_unix_ms: None,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        write_json_atomic(&dir.join("manifest.json"), self)
    }

    pub fn finish(&mut self, dir: &Path) -> Result<(), CliError> {
        self.finished_unix_ms = Some(now_unix_ms());
        self.write(dir)
    }
}

pub fn now_unix_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

/// Serializes next to the target and renames into place, so an abort
/// mid-write never leaves a truncated artifact behind.
pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::runtime(anyhow::anyhow!("cannot serialize {}: {e}", path.display())))?;
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, json)
        .map_err(|e| CliError::runtime(anyhow::anyhow!("cannot write {}: {e}", tmp.display())))?;
    fs::rename(&tmp, path)
        .map_err(|e| CliError::runtime(anyhow::anyhow!("cannot move {} into place: {e}", tmp.display())))?;
    Ok(())
}
