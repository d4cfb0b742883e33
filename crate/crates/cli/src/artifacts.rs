//! Artifact persistence: atomic writes and per-stage manifests.
//!
//! Every artifact except the manifest is byte-deterministic given identical
//! inputs and seeds; timestamps live only in the manifest.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::validation(format!("cannot create {}: {e}", dir.display())))
}

/// Write bytes via a temp file plus rename so readers never see a torn file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)
        .map_err(|e| CliError::validation(format!("cannot write {}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path)
        .map_err(|e| CliError::validation(format!("cannot rename into {}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::computation(format!("cannot serialize {}: {e}", path.display())))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn sha256_str(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub stage: String,
    pub created_utc: String,
    pub config_sha256: String,
    /// Input path -> content hash.
    pub inputs: Vec<(String, String)>,
    pub outputs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tickers: Option<Vec<String>>,
}

impl Manifest {
    pub fn new(stage: &str, config_hash: &str) -> Self {
        Self {
            stage: stage.to_string(),
            created_utc: chrono::Utc::now().to_rfc3339(),
            config_sha256: config_hash.to_string(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            tickers: None,
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        self.inputs
            .push((path.display().to_string(), sha256_file(path)?));
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, CliError> {
        let path = dir.join(format!("manifest_{}.json", self.stage));
        write_json(&path, self)?;
        Ok(path)
    }
}
