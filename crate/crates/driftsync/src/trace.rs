//! Audit-log trace ingestion and pruning.
//!
//! Reduces a raw trace to the clean sequence of mutating events: read-only
//! calls and failed attempts are dropped, retries are collapsed to the final
//! success, and transport-level fields (timestamps, request ids) are stripped.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// One audit-log record as ingested, CloudTrail-compatible field names.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RawEvent {
    #[serde(rename = "eventName")]
    pub event_name: String,
    #[serde(rename = "eventSource", default)]
    pub event_source: String,
    #[serde(rename = "requestParameters", default)]
    pub request_parameters: Value,
    #[serde(rename = "responseElements", default)]
    pub response_elements: Value,
    #[serde(rename = "readOnly", default)]
    pub read_only: Option<bool>,
    #[serde(rename = "errorCode", default)]
    pub error_code: Option<String>,
    #[serde(rename = "eventID", default)]
    pub event_id: String,
    #[serde(rename = "eventTime", default)]
    pub event_time: Option<DateTime<Utc>>,
    #[serde(rename = "requestID", default)]
    pub request_id: String,
}

/// A state-changing event surviving [`prune`]; transport fields are gone.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MutatingEvent {
    pub event_name: String,
    pub event_source: String,
    pub request_parameters: Value,
    pub response_elements: Value,
    /// Position in the cleaned trace.
    pub ordinal: usize,
}

/// Declared layout of a trace file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceFormat {
    /// One JSON record per line.
    Ndjson,
    /// A single document with a top-level `Records` array.
    Records,
}

impl std::str::FromStr for TraceFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ndjson" => Ok(TraceFormat::Ndjson),
            "records" => Ok(TraceFormat::Records),
            other => Err(format!("unknown trace format `{other}`")),
        }
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace file not found: {0}")]
    FileNotFound(String),
    #[error("malformed trace record {index}: {cause}")]
    MalformedTrace { index: usize, cause: String },
    #[error("io error reading trace: {0}")]
    Io(#[from] std::io::Error),
}

/// Pruning knobs; providers vary, so the read-only filter is configurable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PruneConfig {
    /// Event-name prefixes treated as read-only.
    pub read_only_prefixes: Vec<String>,
    /// Parameter fields excluded from retry-group canonicalization
    /// (retries regenerate idempotency tokens).
    pub grouping_ignore_fields: Vec<String>,
    /// Retry window in seconds.
    pub retry_window_secs: i64,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig {
            read_only_prefixes: ["Describe", "List", "Get", "Head", "Lookup"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            grouping_ignore_fields: vec!["clientToken".to_string(), "requestId".to_string()],
            retry_window_secs: 600,
        }
    }
}

/// Reads a trace file into raw events, in file order.
///
/// Unparseable individual records are reported as [`TraceError::MalformedTrace`]
/// with the zero-based record index, never silently dropped.
pub fn ingest_trace(path: &Path, format: TraceFormat) -> Result<Vec<RawEvent>, TraceError> {
    if !path.exists() {
        return Err(TraceError::FileNotFound(path.display().to_string()));
    }
    let text = fs::read_to_string(path)?;
    match format {
        TraceFormat::Ndjson => {
            let mut events = Vec::new();
            for (index, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
                let event: RawEvent = serde_json::from_str(line)
                    .map_err(|e| TraceError::MalformedTrace { index, cause: e.to_string() })?;
                validate_event(index, &event)?;
                events.push(event);
            }
            Ok(events)
        }
        TraceFormat::Records => {
            let doc: Value = serde_json::from_str(&text)
                .map_err(|e| TraceError::MalformedTrace { index: 0, cause: e.to_string() })?;
            let records = doc
                .get("Records")
                .and_then(Value::as_array)
                .ok_or_else(|| TraceError::MalformedTrace {
                    index: 0,
                    cause: "missing top-level `Records` array".to_string(),
                })?;
            let mut events = Vec::new();
            for (index, record) in records.iter().enumerate() {
                let event: RawEvent = serde_json::from_value(record.clone())
                    .map_err(|e| TraceError::MalformedTrace { index, cause: e.to_string() })?;
                validate_event(index, &event)?;
                events.push(event);
            }
            Ok(events)
        }
    }
}

fn validate_event(index: usize, event: &RawEvent) -> Result<(), TraceError> {
    if event.event_name.is_empty() {
        return Err(TraceError::MalformedTrace {
            index,
            cause: "eventName is empty".to_string(),
        });
    }
    Ok(())
}

/// Drops read-only and failed events, collapses retry groups to the final
/// success, and strips transport fields. Relative order of survivors is
/// preserved; a survivor sits at the position of its group's final success.
pub fn prune(events: &[RawEvent], config: &PruneConfig) -> Vec<MutatingEvent> {
    // Retry group key: event name + canonicalized parameters. Membership
    // additionally requires falling within the retry window of the group's
    // previous occurrence.
    #[derive(Debug)]
    struct Group {
        last_time: Option<DateTime<Utc>>,
        // Index (into `events`) of the last non-error occurrence.
        last_success: Option<usize>,
        generation: usize,
    }

    let mut groups: BTreeMap<(String, String), Vec<Group>> = BTreeMap::new();
    for (idx, event) in events.iter().enumerate() {
        if is_read_only(event, config) {
            continue;
        }
        let key = (
            event.event_name.clone(),
            canonical_params(&event.request_parameters, &config.grouping_ignore_fields),
        );
        let entry = groups.entry(key).or_default();
        let in_window = entry.last().map(|g| match (g.last_time, event.event_time) {
            (Some(prev), Some(now)) => {
                (now - prev).num_seconds().abs() <= config.retry_window_secs
            }
            // Without timestamps the window cannot be judged; keeping the
            // occurrence separate is the conservative call and makes prune
            // idempotent once timestamps are stripped.
            _ => false,
        });
        match in_window {
            Some(true) => {}
            _ => {
                let generation = entry.len();
                entry.push(Group { last_time: None, last_success: None, generation });
            }
        }
        let group = entry.last_mut().expect("group exists");
        group.last_time = event.event_time.or(group.last_time);
        if event.error_code.is_none() {
            group.last_success = Some(idx);
        }
        let _ = group.generation;
    }

    let mut survivors: Vec<usize> = groups
        .values()
        .flatten()
        .filter_map(|g| g.last_success)
        .collect();
    survivors.sort_unstable();

    survivors
        .into_iter()
        .enumerate()
        .map(|(ordinal, idx)| {
            let e = &events[idx];
            MutatingEvent {
                event_name: e.event_name.clone(),
                event_source: e.event_source.clone(),
                request_parameters: e.request_parameters.clone(),
                response_elements: e.response_elements.clone(),
                ordinal,
            }
        })
        .collect()
}

fn is_read_only(event: &RawEvent, config: &PruneConfig) -> bool {
    if event.read_only == Some(true) {
        return true;
    }
    config
        .read_only_prefixes
        .iter()
        .any(|p| event.event_name.starts_with(p.as_str()))
}

/// Canonical string form of a parameter document: keys sorted recursively,
/// ignore-listed fields removed at any depth.
pub fn canonical_params(params: &Value, ignore: &[String]) -> String {
    fn canon(value: &Value, ignore: &[String], out: &mut String) {
        match value {
            Value::Object(map) => {
                out.push('{');
                let mut keys: Vec<&String> = map
                    .keys()
                    .filter(|k| !ignore.iter().any(|i| i == *k))
                    .collect();
                keys.sort();
                for (i, key) in keys.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    out.push_str(&serde_json::to_string(key).expect("string encodes"));
                    out.push(':');
                    canon(&map[*key], ignore, out);
                }
                out.push('}');
            }
            Value::Array(items) => {
                out.push('[');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    canon(item, ignore, out);
                }
                out.push(']');
            }
            other => out.push_str(&other.to_string()),
        }
    }
    let mut out = String::new();
    canon(params, ignore, &mut out);
    out
}
