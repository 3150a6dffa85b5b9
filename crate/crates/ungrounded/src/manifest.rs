//! The run manifest: config digest, tool version, and per-stage timings and
//! artifacts. Each command rewrites it as its final action.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{AppError, AppResult};
use crate::formats::write_atomic;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    /// Path relative to the run directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub seconds: f64,
    pub artifacts: Vec<Artifact>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_digest: String,
    pub tool_version: String,
    pub stages: BTreeMap<String, StageRecord>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunManifest {
    pub fn load_or_new(run_dir: &Path, config_digest: &str) -> AppResult<Self> {
        let path = run_dir.join(MANIFEST_FILE);
        if path.exists() {
            let text = std::fs::read(&path).map_err(|e| AppError::io(&path, e))?;
            let m: RunManifest = serde_json::from_slice(&text)
                .map_err(|e| AppError::file(&path, ungrounded_core::Error::Data(format!("bad manifest: {e}"))))?;
            if m.config_digest == config_digest {
                return Ok(m);
            }
        }
        Ok(Self {
            config_digest: config_digest.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            stages: BTreeMap::new(),
        })
    }

    pub fn record(&mut self, run_dir: &Path, stage: &str, seconds: f64, files: &[PathBuf]) -> AppResult<()> {
        let artifacts = files
            .iter()
            .map(|f| {
                let bytes = std::fs::read(f).map_err(|e| AppError::io(f, e))?;
                Ok(Artifact {
                    path: f.strip_prefix(run_dir).unwrap_or(f).to_string_lossy().into_owned(),
                    sha256: sha256_hex(&bytes),
                    bytes: bytes.len() as u64,
                })
            })
            .collect::<AppResult<Vec<_>>>()?;
        self.stages.insert(stage.to_string(), StageRecord { seconds, artifacts });
        Ok(())
    }

    pub fn write(&self, run_dir: &Path) -> AppResult<()> {
        let json = serde_json::to_vec_pretty(self).map_err(|e| AppError::Internal(e.to_string()))?;
        write_atomic(&run_dir.join(MANIFEST_FILE), &json)
    }
}
