//! Managed-state snapshot parsing: the standard state document subset with a
//! top-level `resources` array.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Deserialize)]
struct StateDoc {
    #[serde(default)]
    resources: Vec<StateResource>,
}

#[derive(Debug, Deserialize)]
struct StateResource {
    #[serde(rename = "type")]
    resource_type: String,
    name: String,
    #[serde(default)]
    module: Option<String>,
    #[serde(default)]
    mode: Option<String>,
    #[serde(default)]
    instances: Vec<StateInstance>,
}

#[derive(Debug, Deserialize)]
struct StateInstance {
    #[serde(default)]
    attributes: BTreeMap<String, Value>,
}

/// One managed resource as recorded in the state snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateEntry {
    pub address: String,
    pub resource_type: String,
    pub attributes: BTreeMap<String, Value>,
    /// Provider id, taken from `attributes.id` when present.
    pub provider_id: Option<String>,
}

#[derive(Debug, Error)]
pub enum StateError {
    #[error("state file parse error: {0}")]
    Parse(String),
    #[error("state entry has invalid address `{0}`")]
    InvalidAddress(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Parses a state snapshot into an address-keyed map. Data-source entries
/// (`mode = "data"`) are skipped; unknown fields are ignored.
pub fn parse_state(text: &str) -> Result<BTreeMap<String, StateEntry>, StateError> {
    let doc: StateDoc = serde_json::from_str(text).map_err(|e| StateError::Parse(e.to_string()))?;
    let mut entries = BTreeMap::new();
    for resource in doc.resources {
        if resource.mode.as_deref() == Some("data") {
            continue;
        }
        if resource.resource_type.is_empty() || resource.name.is_empty() {
            return Err(StateError::InvalidAddress(format!(
                "{}.{}",
                resource.resource_type, resource.name
            )));
        }
        let mut address = format!("{}.{}", resource.resource_type, resource.name);
        if let Some(module) = &resource.module {
            address = format!("{module}.{address}");
        }
        let attributes = resource
            .instances
            .into_iter()
            .next()
            .map(|i| i.attributes)
            .unwrap_or_default();
        let provider_id = attributes.get("id").and_then(Value::as_str).map(str::to_string);
        entries.insert(
            address.clone(),
            StateEntry { address, resource_type: resource.resource_type, attributes, provider_id },
        );
    }
    Ok(entries)
}

pub fn load_state(path: &Path) -> Result<BTreeMap<String, StateEntry>, StateError> {
    parse_state(&std::fs::read_to_string(path)?)
}
