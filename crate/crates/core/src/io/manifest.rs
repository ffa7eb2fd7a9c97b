use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{write_atomic, ExperimentConfig};

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// What a run consumed and produced, enough to rerun it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: ExperimentConfig,
    pub seed: u64,
    /// Paths of every file the run wrote, relative to the run directory.
    pub artifacts: Vec<PathBuf>,
    pub version: String,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>, config: &ExperimentConfig) -> Self {
        Self {
            command: command.into(),
            args,
            config: config.clone(),
            seed: config.train.seed,
            artifacts: Vec::new(),
            version: env!("CARGO_PKG_VERSION").into(),
            started_unix: unix_now(),
            finished_unix: None,
        }
    }

    pub fn record(&mut self, artifact: impl Into<PathBuf>) {
        let p = artifact.into();
        if !self.artifacts.contains(&p) {
            self.artifacts.push(p);
        }
    }

    /// Stamps the finish time and writes `manifest.json` into `dir`.
    pub fn finish(&mut self, dir: &Path) -> std::io::Result<PathBuf> {
        self.finished_unix = Some(unix_now());
        self.write(dir)
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<PathBuf> {
        let path = dir.join("manifest.json");
        let json = serde_json::to_vec_pretty(self).map_err(std::io::Error::other)?;
        write_atomic(&path, &json)?;
        Ok(path)
    }
}
