use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use vitalink::clock::Clock;
use vitalink::engine::MlpModel;
use vitalink::server::{MedicalServer, ServerConfig, TokenTable};

use crate::client::webhook_sink;

#[derive(Debug, Error)]
pub enum SettingsError {
    #[error("config {path}: {message}")]
    File { path: String, message: String },
    #[error("model {path}: {message}")]
    Model { path: String, message: String },
    #[error("tokens: {0}")]
    Tokens(String),
    #[error("server: {0}")]
    Server(String),
}

/// Settings for the record service, read from a flat TOML file and/or flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub listen: String,
    pub data_dir: PathBuf,
    pub model: Option<PathBuf>,
    /// CSV of `token,patient_id`.
    pub tokens: PathBuf,
    pub webhook: Option<String>,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8080".into(),
            data_dir: PathBuf::from("vitalink-data"),
            model: None,
            tokens: PathBuf::from("tokens.csv"),
            webhook: None,
        }
    }
}

impl ServeConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, SettingsError> {
        let err = |message: String| SettingsError::File {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        Self::from_toml(&text).map_err(|e| err(e.to_string()))
    }
}

/// Opens the record service described by `cfg`, replaying its data dir.
pub fn build_server(cfg: &ServeConfig, clock: Arc<dyn Clock>) -> Result<MedicalServer, SettingsError> {
    let model = cfg
        .model
        .as_ref()
        .map(|p| {
            MlpModel::load(p).map_err(|e| SettingsError::Model {
                path: p.display().to_string(),
                message: e.to_string(),
            })
        })
        .transpose()?;
    let tokens = TokenTable::load(&cfg.tokens).map_err(|e| SettingsError::Tokens(e.to_string()))?;
    let server_cfg = ServerConfig {
        data_dir: Some(cfg.data_dir.clone()),
        model,
    };
    let mut server = MedicalServer::open(tokens, server_cfg, clock).map_err(|e| SettingsError::Server(e.to_string()))?;
    if let Some(url) = &cfg.webhook {
        server.add_sink(Box::new(webhook_sink(url).map_err(|e| SettingsError::Server(e.to_string()))?));
    }
    Ok(server)
}
