use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliResult;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Provenance record written next to every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub argv: Vec<String>,
    pub seed: Option<u64>,
    /// Effective settings after defaults, config file, and flags.
    pub config: Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub wall_time_seconds: f64,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub summary: Value,
}

pub struct ManifestBuilder {
    command: &'static str,
    started: Instant,
}

impl ManifestBuilder {
    pub fn start(command: &'static str) -> Self {
        Self {
            command,
            started: Instant::now(),
        }
    }

    pub fn finish(
        self,
        seed: Option<u64>,
        config: &impl Serialize,
        inputs: Vec<PathBuf>,
        outputs: Vec<PathBuf>,
        summary: Value,
    ) -> CliResult<RunManifest> {
        Ok(RunManifest {
            command: self.command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            argv: std::env::args().collect(),
            seed,
            config: serde_json::to_value(config)?,
            inputs,
            outputs,
            wall_time_seconds: self.started.elapsed().as_secs_f64(),
            summary,
        })
    }
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> CliResult<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}
