//! The patch–evaluate–refine loop: a model backend driving the tool registry
//! until the drift report is empty or the budget runs out.

pub mod backend;
pub mod ledger;
pub mod tools;

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::consolidate::DriftSet;
use crate::iac::{drift_report, load_workspace, IgnoreSet, LiveState};
use crate::knowledge::{KnowledgeBase, RunOutcome as KbOutcome};
pub use backend::{Action, FinishKind, ModelBackend, ModelError, ModelTurn, ScriptedBackend};
pub use ledger::EditLedger;
pub use tools::{dispatch, ShellPolicy, ToolContext, ToolError, ToolOutcome};

/// Hard ceilings for one reconciliation run.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Budget {
    pub max_rounds: usize,
    pub max_tokens: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Budget { max_rounds: 20, max_tokens: 200_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Exhausted,
    Aborted,
}

/// One observation–thought–action round.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Round {
    pub observation: String,
    pub thought: String,
    pub action: ActionRecord,
    pub result: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActionRecord {
    pub tool: Option<String>,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub arguments: Value,
    pub finish: Option<FinishKind>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Transcript {
    pub rounds: Vec<Round>,
    pub tokens_used: usize,
}

impl Transcript {
    fn render_history(&self) -> String {
        let mut out = String::new();
        for (i, round) in self.rounds.iter().enumerate() {
            out.push_str(&format!(
                "round {}: thought={} action={:?} result={}\n",
                i + 1,
                round.thought,
                round.action.tool,
                round.result.lines().next().unwrap_or("")
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub outcome: Outcome,
    pub transcript: Transcript,
    pub ledger: EditLedger,
    pub rounds_used: usize,
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("workspace error: {0}")]
    Workspace(String),
    #[error("model backend failed: {0}")]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct AgentOptions {
    pub budget: Budget,
    pub ignore: IgnoreSet,
    pub shell: ShellPolicy,
    pub run_id: String,
}

impl Default for AgentOptions {
    fn default() -> Self {
        AgentOptions {
            budget: Budget::default(),
            ignore: IgnoreSet::default(),
            shell: ShellPolicy::default(),
            run_id: "run".to_string(),
        }
    }
}

/// Rough token accounting: 4 chars per token, always rounded up.
fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

/// Runs the reconciliation loop against a workspace on disk. Knowledge
/// staged during the run is committed only when the outcome is success; the
/// final success verdict is re-checked with an independent report.
pub fn run_reconciliation(
    root: &Path,
    drifts: &DriftSet,
    live: &dyn LiveState,
    model: &mut dyn ModelBackend,
    kb: &mut KnowledgeBase,
    options: &AgentOptions,
) -> Result<RunResult, AgentError> {
    let pristine = tempfile::tempdir()?;
    ledger::copy_tree(root, pristine.path())?;

    let mut ledger = EditLedger::default();
    let mut transcript = Transcript::default();
    let mut critiqued = false;

    let initial_report = check_report(root, drifts, live, &options.ignore)
        .map_err(|e| AgentError::Workspace(e))?;
    if initial_report.1 {
        // Nothing to reconcile.
        kb.commit(KbOutcome::Success).ok();
        return Ok(RunResult {
            outcome: Outcome::Success,
            transcript,
            ledger,
            rounds_used: 0,
        });
    }
    let mut observation = initial_report.0;

    let mut outcome = Outcome::Exhausted;
    for round in 1..=options.budget.max_rounds {
        let history = transcript.render_history();
        let turn = model.next_turn(&observation, &history)?;

        let (record, result, declared_success) = match &turn.action {
            Action::Call { tool, arguments } => {
                let mut ctx = ToolContext {
                    root,
                    pristine: pristine.path(),
                    drifts,
                    live,
                    ignore: &options.ignore,
                    ledger: &mut ledger,
                    kb,
                    run_id: &options.run_id,
                    shell: &options.shell,
                };
                let (result, success) = match dispatch(tool, arguments, round, &mut ctx) {
                    Ok(out) => {
                        let success = tool == "drift_report" && out.report_empty == Some(true);
                        if tool == "self_critique" {
                            critiqued = true;
                        }
                        (out.observation, success)
                    }
                    // Tool failures are observations, not faults.
                    Err(e) => (format!("tool error: {e}"), false),
                };
                let record = ActionRecord {
                    tool: Some(tool.clone()),
                    arguments: arguments.clone(),
                    finish: None,
                };
                (record, result, success)
            }
            Action::Finish { finish, summary } => {
                let record =
                    ActionRecord { tool: None, arguments: Value::Null, finish: Some(*finish) };
                match finish {
                    FinishKind::GiveUp => {
                        transcript.account(&observation, &turn.thought, summary, options.budget);
                        transcript.rounds.push(Round {
                            observation: observation.clone(),
                            thought: turn.thought.clone(),
                            action: record,
                            result: summary.clone(),
                        });
                        outcome = Outcome::Aborted;
                        break;
                    }
                    FinishKind::Success => {
                        // Claimed success is only accepted if the report agrees.
                        let (text, empty) = check_report(root, drifts, live, &options.ignore)
                            .map_err(AgentError::Workspace)?;
                        (record, text, empty)
                    }
                }
            }
        };

        if declared_success && !ledger.is_empty() && !critiqued {
            // Forced self-critique before success; folded into this round so
            // the round ceiling holds.
            let mut ctx = ToolContext {
                root,
                pristine: pristine.path(),
                drifts,
                live,
                ignore: &options.ignore,
                ledger: &mut ledger,
                kb,
                run_id: &options.run_id,
                shell: &options.shell,
            };
            let critique = tools::self_critique(&mut ctx);
            let full = format!("{result}\n[forced self-critique]\n{critique}");
            transcript.account(&observation, &turn.thought, &full, options.budget);
            transcript.rounds.push(Round {
                observation: observation.clone(),
                thought: turn.thought.clone(),
                action: record,
                result: full,
            });
            outcome = Outcome::Success;
            break;
        }

        let over_budget =
            transcript.account(&observation, &turn.thought, &result, options.budget);
        transcript.rounds.push(Round {
            observation: observation.clone(),
            thought: turn.thought.clone(),
            action: record,
            result: result.clone(),
        });
        if declared_success {
            // Success wins over a simultaneous budget expiry.
            outcome = Outcome::Success;
            break;
        }
        if over_budget {
            outcome = Outcome::Exhausted;
            break;
        }
        observation = result;
    }

    if outcome == Outcome::Success {
        // Independent re-check: success must mean an empty report.
        let (_, empty) =
            check_report(root, drifts, live, &options.ignore).map_err(AgentError::Workspace)?;
        if !empty {
            outcome = Outcome::Aborted;
        }
    }
    let kb_outcome =
        if outcome == Outcome::Success { KbOutcome::Success } else { KbOutcome::Failure };
    kb.commit(kb_outcome).ok();

    let rounds_used = transcript.rounds.len();
    Ok(RunResult { outcome, transcript, ledger, rounds_used })
}

impl Transcript {
    /// Adds this round's estimated cost, saturating at the ceiling. Returns
    /// true when the budget is now spent.
    fn account(&mut self, observation: &str, thought: &str, result: &str, budget: Budget) -> bool {
        let cost =
            estimate_tokens(observation) + estimate_tokens(thought) + estimate_tokens(result);
        self.tokens_used = (self.tokens_used + cost).min(budget.max_tokens);
        self.tokens_used >= budget.max_tokens
    }
}

fn check_report(
    root: &Path,
    drifts: &DriftSet,
    live: &dyn LiveState,
    ignore: &IgnoreSet,
) -> Result<(String, bool), String> {
    let ws = load_workspace(root).map_err(|e| e.to_string())?;
    let report = drift_report(&ws, drifts, live, ignore).map_err(|e| e.to_string())?;
    Ok((report.render_text(), report.is_empty()))
}
