//! IaC workspace model: configuration parsing, managed-state snapshot,
//! live-state providers, and the trimmed drift report.

pub mod hcl;
pub mod state;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cloudsim::CloudState;
use crate::consolidate::{DriftSet, EdgeDrift, NodeDrift};
pub use hcl::{Attr, AttrValue, Block, ParseError};
pub use state::StateEntry;

/// An IaC project: parsed configuration, managed-state snapshot, identity.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub root: PathBuf,
    /// All top-level blocks from every configuration file under root.
    pub blocks: Vec<Block>,
    pub state: BTreeMap<String, StateEntry>,
    pub project_id: String,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Error)]
pub enum WorkspaceError {
    #[error("workspace root missing or not a directory: {0}")]
    MissingRoot(PathBuf),
    #[error("no configuration files under {0}")]
    NoConfigFiles(PathBuf),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    State(#[from] state::StateError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Stable project identity derived from the canonicalized root path.
pub fn project_id(root: &Path, override_id: Option<&str>) -> String {
    if let Some(id) = override_id {
        return id.to_string();
    }
    let canonical = root.canonicalize().unwrap_or_else(|_| root.to_path_buf());
    let digest = Sha256::digest(canonical.to_string_lossy().as_bytes());
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    hex[..16].to_string()
}

/// Loads every `.tf` file under `root` (skipping `.terraform`) and the first
/// `*.tfstate` snapshot found; an absent snapshot means an empty managed set.
pub fn load_workspace(root: &Path) -> Result<Workspace, WorkspaceError> {
    if !root.is_dir() {
        return Err(WorkspaceError::MissingRoot(root.to_path_buf()));
    }
    let mut config_files = Vec::new();
    let mut state_files = Vec::new();
    for entry in walkdir::WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| e.file_name() != ".terraform")
    {
        let entry = entry.map_err(|e| {
            WorkspaceError::Io(std::io::Error::new(std::io::ErrorKind::Other, e.to_string()))
        })?;
        let path = entry.path();
        match path.extension().and_then(|e| e.to_str()) {
            Some("tf") => config_files.push(path.to_path_buf()),
            Some("tfstate") => state_files.push(path.to_path_buf()),
            _ => {}
        }
    }
    if config_files.is_empty() {
        return Err(WorkspaceError::NoConfigFiles(root.to_path_buf()));
    }

    let mut blocks = Vec::new();
    let mut diagnostics = Vec::new();
    for file in &config_files {
        let source = std::fs::read_to_string(file)?;
        let rel = file.strip_prefix(root).unwrap_or(file).to_path_buf();
        blocks.extend(hcl::parse_file(&rel, &source)?);
    }
    let state = match state_files.first() {
        Some(path) => state::load_state(path)?,
        None => {
            diagnostics.push("no state snapshot found; managed set is empty".to_string());
            BTreeMap::new()
        }
    };
    Ok(Workspace {
        root: root.to_path_buf(),
        blocks,
        state,
        project_id: project_id(root, None),
        diagnostics,
    })
}

impl Workspace {
    /// Resource blocks only (skips modules, moved blocks, providers, ...).
    pub fn resources(&self) -> impl Iterator<Item = &Block> {
        self.blocks.iter().filter(|b| b.resource_type().is_some())
    }

    pub fn block_at(&self, address: &str) -> Option<&Block> {
        self.resources().find(|b| b.address().as_deref() == Some(address))
    }

    /// State entry bound to a provider id, if any.
    pub fn state_entry_for_id(&self, provider_id: &str) -> Option<&StateEntry> {
        self.state.values().find(|e| e.provider_id.as_deref() == Some(provider_id))
    }

    /// Finds the codebase location of a provider id: the block whose state
    /// entry maps to it, else the block whose literal attributes contain it.
    pub fn locate(&self, provider_id: &str) -> Option<(PathBuf, (usize, usize), String)> {
        if let Some(entry) = self.state_entry_for_id(provider_id) {
            if let Some(block) = self.block_at(&entry.address) {
                return Some((block.file.clone(), block.span, entry.address.clone()));
            }
        }
        self.resources()
            .find(|b| b.contains_literal(provider_id))
            .map(|b| (b.file.clone(), b.span, b.address().unwrap_or_default()))
    }
}

// ---------------------------------------------------------------------------
// Live-state providers
// ---------------------------------------------------------------------------

/// Live view of one resource.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveResource {
    #[serde(rename = "type")]
    pub resource_type: String,
    #[serde(default)]
    pub attributes: BTreeMap<String, Value>,
}

#[derive(Debug, Error)]
pub enum LiveError {
    #[error("live state unavailable for {0}")]
    Unavailable(String),
    #[error("live provider failure: {0}")]
    Provider(String),
}

/// Per-id live-state query surface.
pub trait LiveState {
    fn get(&self, id: &str) -> Result<Option<LiveResource>, LiveError>;
}

impl LiveState for CloudState {
    fn get(&self, id: &str) -> Result<Option<LiveResource>, LiveError> {
        Ok(self.nodes.get(id).map(|n| LiveResource {
            resource_type: n.resource_type.clone(),
            attributes: n.attributes.clone(),
        }))
    }
}

/// Recorded-fixture provider: a JSON document mapping provider id to live view.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FixtureProvider {
    pub resources: BTreeMap<String, LiveResource>,
}

impl FixtureProvider {
    pub fn from_json_file(path: &Path) -> Result<FixtureProvider, LiveError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| LiveError::Provider(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| LiveError::Provider(e.to_string()))
    }
}

impl LiveState for FixtureProvider {
    fn get(&self, id: &str) -> Result<Option<LiveResource>, LiveError> {
        Ok(self.resources.get(id).cloned())
    }
}

/// Shell-out adapter: asks an external IaC binary for the live view via
/// `show -json` and indexes resources by their `id` attribute. External
/// invocations are serialized per workspace by taking `&mut self` state
/// through an internal lock.
#[cfg(feature = "shell-live")]
pub struct ShellProvider {
    pub binary: String,
    pub workdir: PathBuf,
    lock: std::sync::Mutex<()>,
}

#[cfg(feature = "shell-live")]
impl ShellProvider {
    pub fn new(binary: &str, workdir: &Path) -> ShellProvider {
        ShellProvider {
            binary: binary.to_string(),
            workdir: workdir.to_path_buf(),
            lock: std::sync::Mutex::new(()),
        }
    }
}

#[cfg(feature = "shell-live")]
impl LiveState for ShellProvider {
    fn get(&self, id: &str) -> Result<Option<LiveResource>, LiveError> {
        let _guard = self.lock.lock().expect("shell provider lock");
        let output = std::process::Command::new(&self.binary)
            .args(["show", "-json"])
            .current_dir(&self.workdir)
            .output()
            .map_err(|e| LiveError::Provider(e.to_string()))?;
        if !output.status.success() {
            return Err(LiveError::Provider(format!(
                "{} show -json exited with {}",
                self.binary, output.status
            )));
        }
        let doc: Value = serde_json::from_slice(&output.stdout)
            .map_err(|e| LiveError::Provider(e.to_string()))?;
        let resources = doc
            .pointer("/values/root_module/resources")
            .and_then(Value::as_array)
            .cloned()
            .unwrap_or_default();
        for resource in resources {
            let values = resource.get("values").cloned().unwrap_or(Value::Null);
            if values.get("id").and_then(Value::as_str) == Some(id) {
                let attributes = values
                    .as_object()
                    .map(|m| m.iter().map(|(k, v)| (k.clone(), v.clone())).collect())
                    .unwrap_or_default();
                let resource_type = resource
                    .get("type")
                    .and_then(Value::as_str)
                    .unwrap_or("Resource")
                    .to_string();
                return Ok(Some(LiveResource { resource_type, attributes }));
            }
        }
        Ok(None)
    }
}

// ---------------------------------------------------------------------------
// Drift report
// ---------------------------------------------------------------------------

/// Attribute names excluded from comparison (provider-computed noise).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IgnoreSet {
    pub patterns: Vec<String>,
}

impl Default for IgnoreSet {
    fn default() -> Self {
        IgnoreSet {
            patterns: ["id", "arn", "*_arn", "*_time", "created_at", "updated_at", "owner_id"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

impl IgnoreSet {
    pub fn ignores(&self, name: &str) -> bool {
        self.patterns.iter().any(|p| match p.strip_prefix('*') {
            Some(suffix) => name.ends_with(suffix),
            None => name == p,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntryKind {
    UnmanagedCreate,
    MissingDelete,
    AttributeUpdate,
    RelationChange,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RequiredAction {
    Import,
    RemoveBlock,
    EditAttributes,
    AddRelation,
    RemoveRelation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub file: PathBuf,
    pub span: (usize, usize),
    pub address: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttrDelta {
    pub name: String,
    pub recorded: Value,
    pub live: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub kind: EntryKind,
    pub provider_id: Option<String>,
    pub resource_type: Option<String>,
    pub deltas: Vec<AttrDelta>,
    /// `None` renders as "not in codebase".
    pub location: Option<Location>,
    pub required_action: RequiredAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Trimmed, reconciliation-oriented diff: only drifted resources appear.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub entries: Vec<ReportEntry>,
}

impl DriftReport {
    /// An empty report means no remaining drift.
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn render_text(&self) -> String {
        if self.entries.is_empty() {
            return "no drift detected\n".to_string();
        }
        let mut out = String::new();
        for entry in &self.entries {
            let kind = match entry.kind {
                EntryKind::UnmanagedCreate => "unmanaged-create",
                EntryKind::MissingDelete => "missing-delete",
                EntryKind::AttributeUpdate => "attribute-update",
                EntryKind::RelationChange => "relation-change",
            };
            let action = match entry.required_action {
                RequiredAction::Import => "import",
                RequiredAction::RemoveBlock => "remove-block",
                RequiredAction::EditAttributes => "edit-attributes",
                RequiredAction::AddRelation => "add-relation",
                RequiredAction::RemoveRelation => "remove-relation",
            };
            let subject = entry
                .location
                .as_ref()
                .map(|l| l.address.clone())
                .or_else(|| entry.provider_id.clone())
                .unwrap_or_default();
            let location = match &entry.location {
                Some(l) => format!("{}:{}-{}", l.file.display(), l.span.0, l.span.1),
                None => "not in codebase".to_string(),
            };
            out.push_str(&format!(
                "{kind} {subject} (type {}) action={action} at {location}\n",
                entry.resource_type.as_deref().unwrap_or("?")
            ));
            for delta in &entry.deltas {
                out.push_str(&format!(
                    "  {}: recorded {} -> live {}\n",
                    delta.name, delta.recorded, delta.live
                ));
            }
            if let Some(note) = &entry.note {
                out.push_str(&format!("  note: {note}\n"));
            }
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Live(#[from] LiveError),
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
}

/// Canonical resource-type form used to compare annotation types (`Vpc`)
/// with configuration types (`aws_vpc`).
pub fn normalize_type(ty: &str) -> String {
    let lower = ty.to_lowercase().replace(['_', '-'], "");
    lower.strip_prefix("aws").map(str::to_string).unwrap_or(lower)
}

fn values_equal(a: &Value, b: &Value) -> bool {
    match (a.as_f64(), b.as_f64()) {
        (Some(x), Some(y)) => (x - y).abs() < 1e-9,
        _ => a == b,
    }
}

/// The recorded view of one resource: state attributes overlaid by the
/// block's literal attributes (the configuration wins, so a patch that edits
/// the block clears the delta).
fn recorded_view(
    state_attrs: Option<&BTreeMap<String, Value>>,
    block: Option<&Block>,
) -> BTreeMap<String, Value> {
    let mut view = state_attrs.cloned().unwrap_or_default();
    if let Some(block) = block {
        for (name, attr) in &block.attrs {
            if let Some(value) = attr.value.as_json() {
                view.insert(name.clone(), value);
            }
        }
    }
    view
}

fn attr_deltas(
    recorded: &BTreeMap<String, Value>,
    live: &BTreeMap<String, Value>,
    ignore: &IgnoreSet,
) -> Vec<AttrDelta> {
    let mut deltas = Vec::new();
    for (name, recorded_value) in recorded {
        if ignore.ignores(name) {
            continue;
        }
        // Keys absent from the live view are configuration-side references
        // (module wiring, id literals), not drift.
        match live.get(name) {
            Some(live_value) if !values_equal(recorded_value, live_value) => {
                deltas.push(AttrDelta {
                    name: name.clone(),
                    recorded: recorded_value.clone(),
                    live: live_value.clone(),
                });
            }
            _ => {}
        }
    }
    deltas
}

fn location_of(block: &Block) -> Location {
    Location {
        file: block.file.clone(),
        span: block.span,
        address: block.address().unwrap_or_default(),
    }
}

/// Computes the trimmed drift report for a workspace against consolidated
/// drifts and a live-state provider. Fully reconciled resources produce no
/// entry; an empty report means no remaining drift.
pub fn drift_report(
    ws: &Workspace,
    drifts: &DriftSet,
    live: &dyn LiveState,
    ignore: &IgnoreSet,
) -> Result<DriftReport, ReportError> {
    let mut entries = Vec::new();

    for (id, drift) in &drifts.node_drifts {
        match drift {
            NodeDrift::PersistentCreate { resource_type }
            | NodeDrift::PersistentUpdate { resource_type, .. } => {
                let live_res = live
                    .get(id)?
                    .ok_or_else(|| LiveError::Unavailable(id.clone()))?;
                let state_entry = ws.state_entry_for_id(id);
                let block = match state_entry {
                    Some(entry) => ws.block_at(&entry.address),
                    None => ws.resources().find(|b| b.contains_literal(id)),
                };
                if state_entry.is_none() && block.is_none() {
                    // Nothing in the codebase references this resource yet.
                    let deltas = live_res
                        .attributes
                        .iter()
                        .filter(|(name, _)| !ignore.ignores(name))
                        .map(|(name, value)| AttrDelta {
                            name: name.clone(),
                            recorded: Value::Null,
                            live: value.clone(),
                        })
                        .collect();
                    entries.push(ReportEntry {
                        kind: EntryKind::UnmanagedCreate,
                        provider_id: Some(id.clone()),
                        resource_type: resource_type
                            .clone()
                            .or(Some(live_res.resource_type.clone())),
                        deltas,
                        location: None,
                        required_action: RequiredAction::Import,
                        note: None,
                    });
                    continue;
                }
                let recorded = recorded_view(state_entry.map(|e| &e.attributes), block);
                let deltas = attr_deltas(&recorded, &live_res.attributes, ignore);
                if !deltas.is_empty() {
                    entries.push(ReportEntry {
                        kind: EntryKind::AttributeUpdate,
                        provider_id: Some(id.clone()),
                        resource_type: resource_type
                            .clone()
                            .or(Some(live_res.resource_type.clone())),
                        deltas,
                        location: block.map(location_of),
                        required_action: RequiredAction::EditAttributes,
                        note: None,
                    });
                }
            }
            NodeDrift::PersistentDelete { resource_type } => {
                let located = ws
                    .state_entry_for_id(id)
                    .and_then(|entry| ws.block_at(&entry.address))
                    .or_else(|| ws.resources().find(|b| b.contains_literal(id)));
                if let Some(block) = located {
                    entries.push(ReportEntry {
                        kind: EntryKind::MissingDelete,
                        provider_id: Some(id.clone()),
                        resource_type: resource_type.clone(),
                        deltas: Vec::new(),
                        location: Some(location_of(block)),
                        required_action: RequiredAction::RemoveBlock,
                        note: None,
                    });
                }
            }
        }
    }

    for ((id1, id2), drift) in &drifts.edge_drifts {
        let covering = ws
            .resources()
            .find(|b| b.contains_literal(id1) && b.contains_literal(id2));
        match drift {
            EdgeDrift::NetAttach { n, type1, type2 } => {
                if covering.is_none() {
                    entries.push(ReportEntry {
                        kind: EntryKind::RelationChange,
                        provider_id: Some(format!("{id1} -> {id2}")),
                        resource_type: match (type1, type2) {
                            (Some(t1), Some(t2)) => Some(format!("{t1}->{t2}")),
                            _ => None,
                        },
                        deltas: Vec::new(),
                        location: None,
                        required_action: RequiredAction::AddRelation,
                        note: (*n > 1).then(|| format!("net multiplicity {n}")),
                    });
                }
            }
            EdgeDrift::NetDetach { n, type1, type2 } => {
                if let Some(block) = covering {
                    entries.push(ReportEntry {
                        kind: EntryKind::RelationChange,
                        provider_id: Some(format!("{id1} -> {id2}")),
                        resource_type: match (type1, type2) {
                            (Some(t1), Some(t2)) => Some(format!("{t1}->{t2}")),
                            _ => None,
                        },
                        deltas: Vec::new(),
                        location: Some(location_of(block)),
                        required_action: RequiredAction::RemoveRelation,
                        note: (*n > 1).then(|| format!("net multiplicity {n}")),
                    });
                }
            }
        }
    }

    entries.sort_by(|a, b| {
        (a.kind, a.location.as_ref().map(|l| l.address.clone()), a.provider_id.clone()).cmp(&(
            b.kind,
            b.location.as_ref().map(|l| l.address.clone()),
            b.provider_id.clone(),
        ))
    });
    Ok(DriftReport { entries })
}
