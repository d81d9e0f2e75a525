//! Run manifests: one JSON record per artifact-producing invocation.
//!
//! A manifest captures everything needed to reproduce or audit a run: the
//! subcommand, its full configuration (flags plus resolved derived
//! values), the controlling seed when one exists, the code version, every
//! artifact path written, and the wall-clock duration. It is written as
//! `run_manifest.json` beside the outputs.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

/// The persisted manifest shape.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub code_version: String,
    pub outputs: Vec<String>,
    pub duration_seconds: f64,
}

/// Collects output paths while a command runs, then writes the manifest.
pub struct RunRecorder {
    command: String,
    config: serde_json::Value,
    seed: Option<u64>,
    started: Instant,
    outputs: Vec<PathBuf>,
}

impl RunRecorder {
    pub fn new(command: &str, config: impl Serialize, seed: Option<u64>) -> anyhow::Result<Self> {
        Ok(RunRecorder {
            command: command.to_string(),
            config: serde_json::to_value(config)?,
            seed,
            started: Instant::now(),
            outputs: Vec::new(),
        })
    }

    /// Registers an artifact path the command has written.
    pub fn record(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Writes `run_manifest.json` into `dir` and returns its path.
    pub fn finish(self, dir: &Path) -> anyhow::Result<PathBuf> {
        let manifest = RunManifest {
            command: self.command,
            config: self.config,
            seed: self.seed,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            outputs: self.outputs.iter().map(|p| p.display().to_string()).collect(),
            duration_seconds: self.started.elapsed().as_secs_f64(),
        };
        let path = dir.join("run_manifest.json");
        let json = serde_json::to_string_pretty(&manifest)?;
        crate::util::write_text(&path, &format!("{json}\n"))?;
        Ok(path)
    }
}
