//! Application config: one JSON file, strictly parsed. Command-line flags
//! override individual keys; the effective config is echoed into batch and
//! study outputs for audit.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::FilterPolicy;
use crate::gateway::BackendConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    pub backend: BackendConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kg_path: Option<String>,
    #[serde(default = "FilterPolicy::default")]
    pub filter: FilterPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read config file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config file {path} is not valid: {detail}")]
    Parse { path: String, detail: String },
    #[error("{0}")]
    Invalid(String),
}

impl AppConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(bytes)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let bytes = std::fs::read(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let config = Self::from_json(&bytes).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        config
            .backend
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        config
            .filter
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::BackendKind;

    #[test]
    fn parses_minimal_mock_config() {
        let config = AppConfig::from_json(
            br#"{"backend": {"kind": "mock", "fixture_dir": "fixtures/mock"},
                 "kg_path": "fixtures/kg.json"}"#,
        )
        .unwrap();
        assert_eq!(config.backend.kind, BackendKind::Mock);
        assert_eq!(config.backend.parallelism, 4);
        assert_eq!(config.backend.max_retries, 2);
        assert_eq!(config.filter.mad_k, 2.5);
        assert_eq!(config.kg_path.as_deref(), Some("fixtures/kg.json"));
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(AppConfig::from_json(
            br#"{"backend": {"kind": "mock", "fixture_dir": "f"}, "verbosity": 3}"#
        )
        .is_err());
        assert!(AppConfig::from_json(
            br#"{"backend": {"kind": "mock", "fixture_dir": "f", "retries": 1}}"#
        )
        .is_err());
    }

    #[test]
    fn filter_overrides_apply() {
        let config = AppConfig::from_json(
            br#"{"backend": {"kind": "mock", "fixture_dir": "f"},
                 "filter": {"mad_k": 3.0}}"#,
        )
        .unwrap();
        assert_eq!(config.filter.mad_k, 3.0);
        assert_eq!(config.filter.mad_scale, 1.4826);
    }
}
