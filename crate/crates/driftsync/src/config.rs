//! Runtime configuration: defaults, `driftsync.toml` overrides, environment,
//! then command-line flags — in that precedence order.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::Budget;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub timeout_secs: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig { endpoint: None, model: None, timeout_secs: 60 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    /// Root for persistent state (knowledge base files live under `kb/`).
    pub state_dir: PathBuf,
    pub backend: BackendConfig,
    pub batch_size: usize,
    pub retries: usize,
    pub read_only_prefixes: Vec<String>,
    pub ignore_attributes: Vec<String>,
    pub max_rounds: usize,
    pub max_tokens: usize,
}

impl Default for Config {
    fn default() -> Self {
        let budget = Budget::default();
        Config {
            state_dir: PathBuf::from(".driftsync"),
            backend: BackendConfig::default(),
            batch_size: 40,
            retries: 2,
            read_only_prefixes: crate::trace::PruneConfig::default().read_only_prefixes,
            ignore_attributes: crate::iac::IgnoreSet::default().patterns,
            max_rounds: budget.max_rounds,
            max_tokens: budget.max_tokens,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config file parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Config {
    /// Loads `<root>/driftsync.toml` when present, then applies the
    /// `DRIFTSYNC_STATE_DIR` environment override.
    pub fn load(root: &Path) -> Result<Config, ConfigError> {
        let mut config = Config::default();
        let path = root.join("driftsync.toml");
        if path.is_file() {
            let text = std::fs::read_to_string(&path)?;
            config = toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        }
        if let Ok(dir) = std::env::var("DRIFTSYNC_STATE_DIR") {
            if !dir.is_empty() {
                config.state_dir = PathBuf::from(dir);
            }
        }
        Ok(config)
    }

    pub fn budget(&self) -> Budget {
        Budget { max_rounds: self.max_rounds, max_tokens: self.max_tokens }
    }

    pub fn prune_config(&self) -> crate::trace::PruneConfig {
        crate::trace::PruneConfig {
            read_only_prefixes: self.read_only_prefixes.clone(),
            ..crate::trace::PruneConfig::default()
        }
    }

    pub fn ignore_set(&self) -> crate::iac::IgnoreSet {
        crate::iac::IgnoreSet { patterns: self.ignore_attributes.clone() }
    }
}
