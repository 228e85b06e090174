use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::trace::VERSION as TRACE_VERSION;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Versions {
    pub geodyn: String,
    pub trace_format: u32,
}

impl Default for Versions {
    fn default() -> Self {
        Versions {
            geodyn: env!("CARGO_PKG_VERSION").to_string(),
            trace_format: TRACE_VERSION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestError {
    pub kind: String,
    pub message: String,
}

/// Run record written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config: serde_json::Value,
    /// SHA-256 of the compact JSON encoding of `config` (keys sorted).
    pub config_hash: String,
    pub seed: Option<u64>,
    pub versions: Versions,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ManifestError>,
    #[serde(default)]
    pub outputs: Vec<PathBuf>,
}

pub fn config_hash(config: &serde_json::Value) -> String {
    let bytes = serde_json::to_vec(config).expect("json values always encode");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Manifest {
    pub fn new(command: impl Into<String>, config: serde_json::Value, seed: Option<u64>) -> Self {
        Manifest {
            command: command.into(),
            config_hash: config_hash(&config),
            config,
            seed,
            versions: Versions::default(),
            status: Status::Ok,
            error: None,
            outputs: Vec::new(),
        }
    }

    pub fn fail(&mut self, kind: &str, message: impl Into<String>) {
        self.status = Status::Error;
        self.error = Some(ManifestError {
            kind: kind.to_string(),
            message: message.into(),
        });
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        text.push('\n');
        std::fs::write(path, text)
    }

    pub fn read(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(std::io::Error::other)
    }
}

/// `manifest.json` in the directory holding `output`.
pub fn manifest_path_for(output: &Path) -> PathBuf {
    match output.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => dir.join(MANIFEST_NAME),
        _ => PathBuf::from(MANIFEST_NAME),
    }
}
