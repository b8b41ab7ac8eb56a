use std::path::Path;
use std::process::Command;

use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, HarnessError};

/// Everything needed to repeat a run. Deliberately carries no timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub crate_version: String,
    pub git_hash: String,
    pub seeds: Vec<u64>,
    pub fig5_seed: u64,
    /// Output file names, relative to the manifest.
    pub outputs: Vec<String>,
    pub config: ExperimentConfig,
}

/// `HEAD` of the enclosing git checkout, or `"unknown"`.
pub fn git_hash() -> String {
    Command::new("git")
        .args(["rev-parse", "HEAD"])
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

impl Manifest {
    pub fn new(command: &str, config: &ExperimentConfig, outputs: &[&str]) -> Self {
        Manifest {
            command: command.into(),
            crate_version: env!("CARGO_PKG_VERSION").into(),
            git_hash: git_hash(),
            seeds: config.seeds.clone(),
            fig5_seed: config.fig5.seed,
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
            config: config.clone(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), HarnessError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| HarnessError::InvalidConfig(format!("manifest: {e}")))
    }
}
