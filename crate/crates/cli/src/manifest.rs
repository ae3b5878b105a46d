//! Run manifests: the resolved configuration, seeds, versions, timing and
//! output paths of one invocation, written next to the results.

use std::path::{Path, PathBuf};

use anyhow::Result;
use chrono::{DateTime, Utc};
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    pub wall_time_ms: u128,
    pub config: serde_json::Value,
    pub outputs: Vec<PathBuf>,
}

pub struct ManifestBuilder {
    command: String,
    seed: u64,
    started_at: DateTime<Utc>,
    started: std::time::Instant,
    config: serde_json::Value,
    outputs: Vec<PathBuf>,
}

impl ManifestBuilder {
    pub fn start(command: &str, seed: u64, config: &impl Serialize) -> Self {
        Self {
            command: command.to_owned(),
            seed,
            started_at: Utc::now(),
            started: std::time::Instant::now(),
            config: serde_json::to_value(config).expect("config serializes"),
            outputs: Vec::new(),
        }
    }

    /// Writes `content` into `out_dir/name` and records it as an output.
    pub fn write_output(&mut self, out_dir: &Path, name: &str, content: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(out_dir)?;
        let path = out_dir.join(name);
        std::fs::write(&path, content)?;
        self.outputs.push(path.clone());
        Ok(path)
    }

    /// Finishes the manifest and writes `manifest.json`.
    pub fn finish(mut self, out_dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(out_dir)?;
        let path = out_dir.join("manifest.json");
        self.outputs.push(path.clone());
        let manifest = RunManifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION").to_owned(),
            seed: self.seed,
            started_at: self.started_at,
            finished_at: Utc::now(),
            wall_time_ms: self.started.elapsed().as_millis(),
            config: self.config,
            outputs: self.outputs,
        };
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
        Ok(path)
    }
}
