use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use cohortq_core::agent::AgentConfig;
use cohortq_core::runtime::DataConfig;

/// Service configuration file.
///
/// ```json
/// {"model": {"kind": "script", "path": "builtin:walkthrough"},
///  "delegation": true, "kb_enabled": true,
///  "store_dir": "data/", "journal": "journal.jsonl"}
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    #[serde(flatten)]
    pub data: DataConfig,
    #[serde(flatten)]
    pub agent: AgentConfig,
    /// Append-only JSON-lines journal of sessions, turns and feedback.
    #[serde(default)]
    pub journal: Option<PathBuf>,
    /// Static chat client assets, mounted under `/ui`.
    #[serde(default)]
    pub ui_dir: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ServiceConfig, ConfigError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: shown.clone(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| ConfigError::Json { path: shown, source })
}
