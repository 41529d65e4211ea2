use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Result};
use serde::Serialize;

use crate::io::write_json;

/// Echo of one CLI invocation and everything it wrote.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub version: String,
    pub wall_clock_s: f64,
    pub outputs: Vec<PathBuf>,
}

pub struct ManifestBuilder {
    command: String,
    config: serde_json::Value,
    seed: Option<u64>,
    start: Instant,
    outputs: Vec<PathBuf>,
}

impl ManifestBuilder {
    pub fn new<C: Serialize>(command: &str, config: &C, seed: Option<u64>) -> Self {
        Self {
            command: command.to_string(),
            config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
            seed,
            start: Instant::now(),
            outputs: Vec::new(),
        }
    }

    pub fn output(&mut self, path: PathBuf) -> PathBuf {
        self.outputs.push(path.clone());
        path
    }

    /// Writes `manifest.json` into `dir` and returns the manifest as JSON text.
    pub fn finish(mut self, dir: &Path) -> Result<String> {
        let path = dir.join("manifest.json");
        self.outputs.push(path.clone());
        let m = RunManifest {
            command: self.command,
            config: self.config,
            seed: self.seed,
            version: kdm::VERSION.to_string(),
            wall_clock_s: self.start.elapsed().as_secs_f64(),
            outputs: self.outputs,
        };
        for p in &m.outputs[..m.outputs.len() - 1] {
            if !p.exists() {
                bail!("declared output {} was not written", p.display());
            }
        }
        write_json(&path, &m)?;
        Ok(serde_json::to_string_pretty(&m)?)
    }
}
