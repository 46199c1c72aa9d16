//! Model backends for the reconciliation loop: an HTTP adapter for a hosted
//! model and a scripted backend that replays a fixed action list.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model transport error: {0}")]
    Transport(String),
    #[error("model returned an unusable turn: {0}")]
    Format(String),
    #[error("script error: {0}")]
    Script(String),
}

/// One model decision: either a tool invocation or a declaration that the
/// run is finished.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Action {
    Call { tool: String, #[serde(default)] arguments: Value },
    Finish { finish: FinishKind, #[serde(default)] summary: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishKind {
    Success,
    GiveUp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTurn {
    #[serde(default)]
    pub thought: String,
    #[serde(flatten)]
    pub action: Action,
}

/// Sampling parameters passed through to the backend. Temperature defaults
/// to 0 for reproducibility.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sampling {
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_p: Option<f64>,
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling { temperature: 0.0, top_p: None }
    }
}

pub trait ModelBackend {
    /// Produces the next turn given the latest observation. The transcript so
    /// far is provided as rendered text for context-bearing backends.
    fn next_turn(&mut self, observation: &str, history: &str) -> Result<ModelTurn, ModelError>;
}

/// Deterministic backend replaying a fixed turn list from a script document.
#[derive(Debug, Clone, Deserialize)]
pub struct ScriptedBackend {
    pub turns: Vec<ModelTurn>,
    /// When true, the turn list repeats instead of running out.
    #[serde(default)]
    pub cycle: bool,
    #[serde(skip)]
    cursor: usize,
}

impl ScriptedBackend {
    pub fn new(turns: Vec<ModelTurn>) -> ScriptedBackend {
        ScriptedBackend { turns, cycle: false, cursor: 0 }
    }

    pub fn from_json_file(path: &Path) -> Result<ScriptedBackend, ModelError> {
        let text = std::fs::read_to_string(path).map_err(|e| ModelError::Script(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| ModelError::Script(e.to_string()))
    }
}

impl ModelBackend for ScriptedBackend {
    fn next_turn(&mut self, _observation: &str, _history: &str) -> Result<ModelTurn, ModelError> {
        if self.turns.is_empty() {
            return Err(ModelError::Script("empty script".to_string()));
        }
        if self.cursor >= self.turns.len() {
            if self.cycle {
                self.cursor = 0;
            } else {
                // Running out of script means the scenario author did not plan
                // for this many turns; give up rather than loop.
                return Ok(ModelTurn {
                    thought: "script exhausted".to_string(),
                    action: Action::Finish {
                        finish: FinishKind::GiveUp,
                        summary: "script exhausted".to_string(),
                    },
                });
            }
        }
        let turn = self.turns[self.cursor].clone();
        self.cursor += 1;
        Ok(turn)
    }
}

/// HTTP adapter: POSTs the observation plus rendered history and expects a
/// `ModelTurn` JSON document back.
pub struct LlmHttpBackend {
    pub endpoint: String,
    pub sampling: Sampling,
    pub timeout: Duration,
    client: reqwest::blocking::Client,
}

impl LlmHttpBackend {
    pub fn new(endpoint: &str, sampling: Sampling) -> LlmHttpBackend {
        LlmHttpBackend {
            endpoint: endpoint.to_string(),
            sampling,
            timeout: Duration::from_secs(60),
            client: reqwest::blocking::Client::new(),
        }
    }
}

impl ModelBackend for LlmHttpBackend {
    fn next_turn(&mut self, observation: &str, history: &str) -> Result<ModelTurn, ModelError> {
        let body = serde_json::json!({
            "observation": observation,
            "history": history,
            "tools": super::tools::TOOL_NAMES,
            "sampling": self.sampling,
        });
        let response = self
            .client
            .post(&self.endpoint)
            .timeout(self.timeout)
            .json(&body)
            .send()
            .map_err(|e| ModelError::Transport(e.to_string()))?;
        if !response.status().is_success() {
            return Err(ModelError::Transport(format!("status {}", response.status())));
        }
        response.json::<ModelTurn>().map_err(|e| ModelError::Format(e.to_string()))
    }
}
