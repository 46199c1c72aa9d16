//! Evaluation harness: scenario bundles over the simulated cloud, patch
//! correctness as plan equivalence (imports allowed, moved blocks matched),
//! and pass@k scoring.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::agent::{self, ledger::copy_tree, AgentOptions, ModelBackend, Outcome};
use crate::annotate::{annotate_trace, AnnotateOptions, RuleTable};
use crate::cloudsim::CloudState;
use crate::consolidate::{consolidate, DriftSet};
use crate::iac::{load_workspace, normalize_type, Block, IgnoreSet, Workspace};
use crate::knowledge::KnowledgeBase;
use crate::trace::{ingest_trace, prune, PruneConfig, TraceFormat};

/// Desired end state: the mutated cloud, plus the address each resource
/// carries in the mutated configuration (used for moved-block matching).
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub cloud: CloudState,
    pub addresses: BTreeMap<String, String>,
}

impl GroundTruth {
    pub fn from_json(text: &str) -> Result<GroundTruth, EvalError> {
        let doc: Value =
            serde_json::from_str(text).map_err(|e| EvalError::Malformed(e.to_string()))?;
        let (cloud_doc, addresses) = match doc.get("cloud") {
            Some(cloud) => {
                let addresses = doc
                    .get("addresses")
                    .and_then(Value::as_object)
                    .map(|m| {
                        m.iter()
                            .filter_map(|(k, v)| v.as_str().map(|s| (k.clone(), s.to_string())))
                            .collect()
                    })
                    .unwrap_or_default();
                (cloud.clone(), addresses)
            }
            None => (doc, BTreeMap::new()),
        };
        let cloud: CloudState =
            serde_json::from_value(cloud_doc).map_err(|e| EvalError::Malformed(e.to_string()))?;
        Ok(GroundTruth { cloud, addresses })
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct ScenarioMeta {
    pub name: String,
    pub expected_persistent: bool,
    #[serde(default)]
    pub description: Option<String>,
    /// Trace file format; defaults to ndjson.
    #[serde(default)]
    pub trace_format: Option<String>,
}

/// One scenario bundle on disk.
#[derive(Debug)]
pub struct Scenario {
    pub meta: ScenarioMeta,
    pub dir: PathBuf,
    pub ground_truth: GroundTruth,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("scenario bundle malformed: {0}")]
    Malformed(String),
    #[error("scenario `{scenario}` has {have} attempts, fewer than k={k}")]
    InsufficientAttempts { scenario: String, have: usize, k: usize },
    #[error("pipeline failure: {0}")]
    Pipeline(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn load_scenario(dir: &Path) -> Result<Scenario, EvalError> {
    let meta_text = std::fs::read_to_string(dir.join("scenario.toml"))?;
    let meta: ScenarioMeta =
        toml::from_str(&meta_text).map_err(|e| EvalError::Malformed(e.to_string()))?;
    let truth_text = std::fs::read_to_string(dir.join("ground_truth.state"))?;
    let ground_truth = GroundTruth::from_json(&truth_text)?;
    if !dir.join("base").is_dir() {
        return Err(EvalError::Malformed(format!("{}: missing base/", dir.display())));
    }
    Ok(Scenario { meta, dir: dir.to_path_buf(), ground_truth })
}

/// All bundles directly under `root`, sorted by name.
pub fn load_scenarios(root: &Path) -> Result<Vec<Scenario>, EvalError> {
    let mut scenarios = Vec::new();
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.join("scenario.toml").is_file())
        .collect();
    dirs.sort();
    for dir in dirs {
        scenarios.push(load_scenario(&dir)?);
    }
    Ok(scenarios)
}

/// Runs the ingestion half of the pipeline for a scenario and returns the
/// consolidated drifts.
pub fn scenario_drifts(scenario: &Scenario) -> Result<DriftSet, EvalError> {
    let format = match scenario.meta.trace_format.as_deref() {
        Some("records") => TraceFormat::Records,
        _ => TraceFormat::Ndjson,
    };
    let raw = ingest_trace(&scenario.dir.join("trace.ndjson"), format)
        .map_err(|e| EvalError::Pipeline(e.to_string()))?;
    let mutating = prune(&raw, &PruneConfig::default());
    let table = RuleTable::builtin();
    let annotated =
        annotate_trace(&mutating, &table, 40, 2, &AnnotateOptions { fallback_to_unknown: true })
            .map_err(|e| EvalError::Pipeline(e.to_string()))?;
    Ok(consolidate(&annotated))
}

// ---------------------------------------------------------------------------
// Patch correctness
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub kind: String,
    pub subject: String,
    pub detail: String,
}

/// Plan-equivalence verdict: correct iff nothing beyond the allowed import
/// actions separates the patched workspace from ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub correct: bool,
    pub import_actions: Vec<String>,
    pub residual_changes: Vec<Residual>,
    pub moved_pairs: Vec<(String, String)>,
}

fn block_literal_attrs(block: &Block) -> BTreeMap<String, Value> {
    block
        .attrs
        .iter()
        .filter_map(|(name, attr)| attr.value.as_json().map(|v| (name.clone(), v)))
        .collect()
}

fn values_equal(a: &Value, b: &Value) -> bool {
    match (a.as_f64(), b.as_f64()) {
        (Some(x), Some(y)) => (x - y).abs() < 1e-9,
        _ => a == b,
    }
}

/// True when every non-ignored ground-truth attribute appears among the
/// block's literals with an equal value.
fn fingerprint_matches(
    block: &Block,
    truth_attrs: &BTreeMap<String, Value>,
    ignore: &IgnoreSet,
) -> bool {
    let literals = block_literal_attrs(block);
    let comparable: Vec<_> =
        truth_attrs.iter().filter(|(name, _)| !ignore.ignores(name)).collect();
    if comparable.is_empty() {
        return false;
    }
    comparable
        .iter()
        .all(|(name, value)| literals.get(*name).map(|v| values_equal(v, value)) == Some(true))
}

/// How a patched block covers a ground-truth resource, strongest first.
fn coverage_of<'w>(
    ws: &'w Workspace,
    id: &str,
    truth_type: &str,
    truth_attrs: &BTreeMap<String, Value>,
    ignore: &IgnoreSet,
) -> Option<(&'w Block, bool)> {
    // State binding: managed resource; no import needed.
    if let Some(entry) = ws.state_entry_for_id(id) {
        if let Some(block) = ws.block_at(&entry.address) {
            return Some((block, false));
        }
    }
    let typed = |b: &&Block| {
        b.resource_type().map(|t| normalize_type(t) == normalize_type(truth_type)) == Some(true)
    };
    // Literal id: covered but unmanaged — an import action.
    if let Some(block) = ws.resources().filter(typed).find(|b| b.contains_literal(id)) {
        return Some((block, true));
    }
    // Full attribute fingerprint: covers renamed resources without id refs.
    ws.resources()
        .filter(typed)
        .find(|b| fingerprint_matches(b, truth_attrs, ignore))
        .map(|b| (b, true))
}

/// Compares a patched workspace against ground truth. New blocks covering
/// previously unmanaged resources count as imports; everything else that
/// differs is a residual change and makes the patch incorrect.
pub fn check_patch(ws: &Workspace, truth: &GroundTruth, ignore: &IgnoreSet) -> Verdict {
    let mut residuals = Vec::new();
    let mut imports = Vec::new();
    let mut claimed_blocks: BTreeSet<String> = BTreeSet::new();

    for (id, node) in &truth.cloud.nodes {
        match coverage_of(ws, id, &node.resource_type, &node.attributes, ignore) {
            None => residuals.push(Residual {
                kind: "missing-resource".to_string(),
                subject: id.clone(),
                detail: format!("no block covers {} {id}", node.resource_type),
            }),
            Some((block, is_import)) => {
                let address = block.address().unwrap_or_default();
                claimed_blocks.insert(address.clone());
                if is_import {
                    imports.push(address.clone());
                }
                // Managed attributes must match desired state. Recorded view:
                // state attrs overlaid by block literals.
                let mut recorded = ws
                    .state_entry_for_id(id)
                    .map(|e| e.attributes.clone())
                    .unwrap_or_default();
                recorded.extend(block_literal_attrs(block));
                for (name, want) in &node.attributes {
                    if ignore.ignores(name) {
                        continue;
                    }
                    match recorded.get(name) {
                        Some(have) if values_equal(have, want) => {}
                        Some(have) => residuals.push(Residual {
                            kind: "attribute-update".to_string(),
                            subject: format!("{address}.{name}"),
                            detail: format!("recorded {have}, desired {want}"),
                        }),
                        None if is_import => residuals.push(Residual {
                            kind: "attribute-update".to_string(),
                            subject: format!("{address}.{name}"),
                            detail: format!("import block missing attribute, desired {want}"),
                        }),
                        None => {}
                    }
                }
            }
        }
    }

    // Deleted resources must be gone from the configuration: a block whose
    // state binding points at an id absent from ground truth is residual.
    for entry in ws.state.values() {
        let Some(id) = entry.provider_id.as_deref() else { continue };
        if !truth.cloud.nodes.contains_key(id) {
            if let Some(block) = ws.block_at(&entry.address) {
                residuals.push(Residual {
                    kind: "undeleted-block".to_string(),
                    subject: block.address().unwrap_or_default(),
                    detail: format!("{id} no longer exists"),
                });
            }
        }
    }

    // Relations: every ground-truth edge needs a block carrying both ids.
    for ((id1, id2), _count) in &truth.cloud.edges {
        let covered = ws
            .resources()
            .any(|b| b.contains_literal(id1) && b.contains_literal(id2));
        if !covered {
            residuals.push(Residual {
                kind: "missing-relation".to_string(),
                subject: format!("{id1} -> {id2}"),
                detail: "no block references both endpoints".to_string(),
            });
        }
    }

    let moved_pairs = match_moved(ws, truth, ignore);
    residuals.sort_by(|a, b| (&a.kind, &a.subject).cmp(&(&b.kind, &b.subject)));
    imports.sort();
    imports.dedup();
    Verdict { correct: residuals.is_empty(), import_actions: imports, residual_changes: residuals, moved_pairs }
}

/// Pairs ground-truth addresses with same-resource patched blocks that carry
/// a different name. Greedy one-to-one: id matches claim blocks first, then
/// exact attribute fingerprints.
pub fn match_moved(
    ws: &Workspace,
    truth: &GroundTruth,
    ignore: &IgnoreSet,
) -> Vec<(String, String)> {
    let mut pairs = Vec::new();
    let mut used: BTreeSet<String> = BTreeSet::new();

    // Pass 1: provider-id matches.
    for (id, expected_address) in &truth.addresses {
        let Some(node) = truth.cloud.nodes.get(id) else { continue };
        let candidate = ws
            .resources()
            .filter(|b| {
                b.resource_type().map(|t| normalize_type(t) == normalize_type(&node.resource_type))
                    == Some(true)
            })
            .filter(|b| !used.contains(&b.address().unwrap_or_default()))
            .find(|b| {
                b.contains_literal(id)
                    || ws.state_entry_for_id(id).map(|e| &e.address)
                        == b.address().as_ref().map(|a| a)
            });
        if let Some(block) = candidate {
            let address = block.address().unwrap_or_default();
            used.insert(address.clone());
            if &address != expected_address {
                pairs.push((expected_address.clone(), address));
            }
        }
    }
    // Pass 2: exact attribute fingerprints for still-unmatched addresses.
    for (id, expected_address) in &truth.addresses {
        if pairs.iter().any(|(old, _)| old == expected_address) {
            continue;
        }
        let Some(node) = truth.cloud.nodes.get(id) else { continue };
        if ws.block_at(expected_address).is_some()
            || ws.state_entry_for_id(id).is_some()
        {
            continue;
        }
        let candidate = ws
            .resources()
            .filter(|b| {
                b.resource_type().map(|t| normalize_type(t) == normalize_type(&node.resource_type))
                    == Some(true)
            })
            .filter(|b| !used.contains(&b.address().unwrap_or_default()))
            .find(|b| fingerprint_matches(b, &node.attributes, ignore));
        if let Some(block) = candidate {
            let address = block.address().unwrap_or_default();
            used.insert(address.clone());
            if &address != expected_address {
                pairs.push((expected_address.clone(), address));
            }
        }
    }
    pairs.sort();
    pairs
}

// ---------------------------------------------------------------------------
// Scenario execution and scoring
// ---------------------------------------------------------------------------

/// One reconciliation attempt on one scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub scenario: String,
    pub correct: bool,
    pub agent_outcome: Outcome,
    pub tokens: usize,
    pub rounds: usize,
    pub verdict: Verdict,
}

/// Copies the base workspace into a temp dir, runs the pipeline and the
/// agent, and verdicts the patched result against ground truth.
pub fn run_scenario(
    scenario: &Scenario,
    model: &mut dyn ModelBackend,
    kb: &mut KnowledgeBase,
    options: &AgentOptions,
) -> Result<AttemptRecord, EvalError> {
    let drifts = scenario_drifts(scenario)?;
    let work = tempfile::tempdir()?;
    copy_tree(&scenario.dir.join("base"), work.path())?;

    let result = agent::run_reconciliation(
        work.path(),
        &drifts,
        &scenario.ground_truth.cloud,
        model,
        kb,
        options,
    )
    .map_err(|e| EvalError::Pipeline(e.to_string()))?;

    let ws = load_workspace(work.path()).map_err(|e| EvalError::Pipeline(e.to_string()))?;
    let verdict = check_patch(&ws, &scenario.ground_truth, &options.ignore);
    Ok(AttemptRecord {
        scenario: scenario.meta.name.clone(),
        correct: verdict.correct && result.outcome == Outcome::Success,
        agent_outcome: result.outcome,
        tokens: result.transcript.tokens_used,
        rounds: result.rounds_used,
        verdict,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioScore {
    pub scenario: String,
    pub pass_at_k: bool,
    pub attempts: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreReport {
    pub k: usize,
    pub per_scenario: Vec<ScenarioScore>,
    /// Fraction of scenarios with at least one correct attempt among the
    /// first k.
    pub aggregate_pass_at_k: f64,
    pub mean_tokens: f64,
    pub mean_rounds: f64,
}

/// pass@k over recorded attempts, grouped by scenario.
pub fn score(runs: &BTreeMap<String, Vec<AttemptRecord>>, k: usize) -> Result<ScoreReport, EvalError> {
    let mut per_scenario = Vec::new();
    let mut token_sum = 0usize;
    let mut round_sum = 0usize;
    let mut attempt_count = 0usize;
    for (scenario, attempts) in runs {
        if attempts.len() < k {
            return Err(EvalError::InsufficientAttempts {
                scenario: scenario.clone(),
                have: attempts.len(),
                k,
            });
        }
        let pass = attempts.iter().take(k).any(|a| a.correct);
        per_scenario.push(ScenarioScore {
            scenario: scenario.clone(),
            pass_at_k: pass,
            attempts: attempts.len(),
        });
        for attempt in attempts {
            token_sum += attempt.tokens;
            round_sum += attempt.rounds;
            attempt_count += 1;
        }
    }
    let scenarios = per_scenario.len();
    let passed = per_scenario.iter().filter(|s| s.pass_at_k).count();
    Ok(ScoreReport {
        k,
        aggregate_pass_at_k: if scenarios == 0 { 0.0 } else { passed as f64 / scenarios as f64 },
        mean_tokens: if attempt_count == 0 { 0.0 } else { token_sum as f64 / attempt_count as f64 },
        mean_rounds: if attempt_count == 0 { 0.0 } else { round_sum as f64 / attempt_count as f64 },
        per_scenario,
    })
}
