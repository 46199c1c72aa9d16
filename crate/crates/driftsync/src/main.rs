//! Command-line entry point.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use driftsync::agent::{AgentOptions, ModelBackend, Outcome, ScriptedBackend};
use driftsync::annotate::{annotate_trace, AnnotateOptions, AnnotatedEvent, RuleTable};
use driftsync::cloudsim::CloudState;
use driftsync::config::Config;
use driftsync::consolidate::{consolidate, DriftSet};
use driftsync::eval::{load_scenarios, run_scenario, score, AttemptRecord};
use driftsync::iac::{drift_report, load_workspace, project_id, FixtureProvider};
use driftsync::knowledge::{retrieve, Entry, KnowledgeBase, RunOutcome};
use driftsync::trace::{ingest_trace, prune, MutatingEvent, TraceFormat};

#[derive(Parser)]
#[command(name = "driftsync", version, about = "Reconcile IaC workspaces against audit-log drift")]
struct Cli {
    /// Directory holding driftsync.toml (defaults to the current directory).
    #[arg(long, global = true, default_value = ".")]
    config_root: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Json,
    Text,
}

#[derive(Subcommand)]
enum Command {
    /// Trace ingestion and pruning.
    Trace {
        #[command(subcommand)]
        command: TraceCommand,
    },
    /// Annotate a pruned trace with drift intents.
    Annotate(AnnotateArgs),
    /// Consolidate annotated events into persistent drifts.
    Consolidate(ConsolidateArgs),
    /// Compute the drift report for a workspace.
    Report(ReportArgs),
    /// Simulated-cloud operations.
    Sim {
        #[command(subcommand)]
        command: SimCommand,
    },
    /// Run the full patch–evaluate–refine loop.
    Reconcile(ReconcileArgs),
    /// Knowledge-base maintenance.
    Kb {
        #[command(subcommand)]
        command: KbCommand,
    },
    /// Evaluate scenario bundles.
    Eval(EvalArgs),
}

#[derive(Subcommand)]
enum TraceCommand {
    /// Ingest a trace file and keep only mutating final successes.
    Prune(PruneArgs),
}

#[derive(Args)]
struct PruneArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value = "ndjson")]
    trace_format: String,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: OutputFormat,
}

#[derive(Args)]
struct AnnotateArgs {
    /// Pruned-trace JSON (array of mutating events).
    #[arg(long = "in")]
    input: PathBuf,
    /// Rule-table JSON; the builtin table is used when omitted.
    #[arg(long)]
    rules: Option<PathBuf>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    retries: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ConsolidateArgs {
    /// Annotated-events JSON.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: OutputFormat,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    workspace: PathBuf,
    /// Consolidated DriftSet JSON.
    #[arg(long)]
    drifts: PathBuf,
    /// Live-state fixture JSON (CloudState document or id-keyed resources).
    #[arg(long)]
    live: PathBuf,
    #[arg(long, value_enum, default_value = "text")]
    format: OutputFormat,
}

#[derive(Subcommand)]
enum SimCommand {
    /// Replay annotated events over a cloud-state document.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct ReplayArgs {
    /// Initial CloudState JSON; empty state when omitted.
    #[arg(long)]
    state: Option<PathBuf>,
    /// Annotated-events JSON.
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReconcileArgs {
    #[arg(long)]
    workspace: PathBuf,
    #[arg(long)]
    trace: PathBuf,
    #[arg(long, default_value = "ndjson")]
    trace_format: String,
    /// Live-state fixture JSON.
    #[arg(long)]
    live: PathBuf,
    /// `scripted:FILE` or `llm-http` (endpoint from config).
    #[arg(long)]
    backend: String,
    #[arg(long)]
    max_rounds: Option<usize>,
    #[arg(long)]
    max_tokens: Option<usize>,
    /// Write the transcript as JSON here.
    #[arg(long)]
    transcript: Option<PathBuf>,
}

#[derive(Subcommand)]
enum KbCommand {
    /// List entries for a project.
    List {
        #[arg(long)]
        project: PathBuf,
        /// Optional retrieval query; all entries when omitted.
        #[arg(long)]
        query: Option<String>,
    },
    /// Append an entry (committed immediately as a successful run).
    Add {
        #[arg(long)]
        project: PathBuf,
        entry: String,
    },
    /// Remove an entry by index.
    Rm {
        #[arg(long)]
        project: PathBuf,
        index: usize,
    },
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    scenarios: PathBuf,
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Attempts per scenario (each replays the bundle's script).
    #[arg(long, default_value_t = 1)]
    attempts: usize,
    #[arg(long)]
    report: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(message) => {
            eprintln!("error: {message}");
            std::process::exit(1);
        }
    }
}

fn emit(out: &Option<PathBuf>, content: &str) -> Result<(), String> {
    match out {
        Some(path) => std::fs::write(path, content).map_err(|e| e.to_string()),
        None => {
            let mut stdout = std::io::stdout();
            stdout.write_all(content.as_bytes()).map_err(|e| e.to_string())
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn parse_trace_format(raw: &str) -> Result<TraceFormat, String> {
    raw.parse::<TraceFormat>().map_err(|e| e.to_string())
}

fn load_live(path: &Path) -> Result<CloudState, String> {
    // Accept either a CloudState document or a FixtureProvider map.
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    if let Ok(state) = serde_json::from_str::<CloudState>(&text) {
        return Ok(state);
    }
    let fixture: FixtureProvider =
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut state = CloudState::new();
    for (id, resource) in fixture.resources {
        state = state.with_node(&id, &resource.resource_type, resource.attributes);
    }
    Ok(state)
}

fn run(cli: Cli) -> Result<i32, String> {
    let config = Config::load(&cli.config_root).map_err(|e| e.to_string())?;
    match cli.command {
        Command::Trace { command: TraceCommand::Prune(args) } => {
            let format = parse_trace_format(&args.trace_format)?;
            let raw = ingest_trace(&args.input, format).map_err(|e| e.to_string())?;
            let pruned = prune(&raw, &config.prune_config());
            let content = match args.format {
                OutputFormat::Json => serde_json::to_string_pretty(&pruned).unwrap() + "\n",
                OutputFormat::Text => pruned
                    .iter()
                    .map(|e| format!("{} {}\n", e.ordinal, e.event_name))
                    .collect(),
            };
            emit(&args.out, &content)?;
            Ok(0)
        }
        Command::Annotate(args) => {
            let events: Vec<MutatingEvent> = read_json(&args.input)?;
            let table = match &args.rules {
                Some(path) => RuleTable::from_json_file(path).map_err(|e| e.to_string())?,
                None => RuleTable::builtin(),
            };
            let annotated = annotate_trace(
                &events,
                &table,
                args.batch_size.unwrap_or(config.batch_size),
                args.retries.unwrap_or(config.retries),
                &AnnotateOptions { fallback_to_unknown: true },
            )
            .map_err(|e| e.to_string())?;
            let content = serde_json::to_string_pretty(&annotated).unwrap() + "\n";
            emit(&args.out, &content)?;
            Ok(0)
        }
        Command::Consolidate(args) => {
            let events: Vec<AnnotatedEvent> = read_json(&args.input)?;
            let drifts = consolidate(&events);
            let content = match args.format {
                OutputFormat::Json => serde_json::to_string_pretty(&drifts).unwrap() + "\n",
                OutputFormat::Text => format!(
                    "{} node drift(s), {} edge drift(s), {} unknown(s)\n",
                    drifts.node_drifts.len(),
                    drifts.edge_drifts.len(),
                    drifts.unknowns.len()
                ),
            };
            emit(&args.out, &content)?;
            Ok(0)
        }
        Command::Report(args) => {
            let ws = load_workspace(&args.workspace).map_err(|e| e.to_string())?;
            let drifts: DriftSet = read_json(&args.drifts)?;
            let live = load_live(&args.live)?;
            let report = drift_report(&ws, &drifts, &live, &config.ignore_set())
                .map_err(|e| e.to_string())?;
            let content = match args.format {
                OutputFormat::Json => serde_json::to_string_pretty(&report).unwrap() + "\n",
                OutputFormat::Text => report.render_text(),
            };
            emit(&None, &content)?;
            Ok(0)
        }
        Command::Sim { command: SimCommand::Replay(args) } => {
            let state = match &args.state {
                Some(path) => read_json::<CloudState>(path)?,
                None => CloudState::new(),
            };
            let events: Vec<AnnotatedEvent> = read_json(&args.annotations)?;
            let replayed = state.replay_events(&events);
            let content = serde_json::to_string_pretty(&replayed).unwrap() + "\n";
            emit(&args.out, &content)?;
            Ok(0)
        }
        Command::Reconcile(args) => {
            let format = parse_trace_format(&args.trace_format)?;
            let raw = ingest_trace(&args.trace, format).map_err(|e| e.to_string())?;
            let pruned = prune(&raw, &config.prune_config());
            let annotated = annotate_trace(
                &pruned,
                &RuleTable::builtin(),
                config.batch_size,
                config.retries,
                &AnnotateOptions { fallback_to_unknown: true },
            )
            .map_err(|e| e.to_string())?;
            let drifts = consolidate(&annotated);
            let live = load_live(&args.live)?;

            let mut backend: Box<dyn ModelBackend> = if let Some(script) =
                args.backend.strip_prefix("scripted:")
            {
                Box::new(
                    ScriptedBackend::from_json_file(Path::new(script)).map_err(|e| e.to_string())?,
                )
            } else if args.backend == "llm-http" {
                let endpoint = config
                    .backend
                    .endpoint
                    .clone()
                    .ok_or("llm-http backend requires backend.endpoint in driftsync.toml")?;
                Box::new(driftsync::agent::backend::LlmHttpBackend::new(
                    &endpoint,
                    driftsync::agent::backend::Sampling::default(),
                ))
            } else {
                return Err(format!("unknown backend `{}`", args.backend));
            };

            let project = project_id(&args.workspace, None);
            let mut kb =
                KnowledgeBase::open(&config.state_dir, &project).map_err(|e| e.to_string())?;
            let mut budget = config.budget();
            if let Some(rounds) = args.max_rounds {
                budget.max_rounds = rounds;
            }
            if let Some(tokens) = args.max_tokens {
                budget.max_tokens = tokens;
            }
            let options = AgentOptions {
                budget,
                ignore: config.ignore_set(),
                run_id: project.clone(),
                ..AgentOptions::default()
            };
            let result = driftsync::agent::run_reconciliation(
                &args.workspace,
                &drifts,
                &live,
                backend.as_mut(),
                &mut kb,
                &options,
            )
            .map_err(|e| e.to_string())?;
            if let Some(path) = &args.transcript {
                std::fs::write(path, serde_json::to_string_pretty(&result.transcript).unwrap())
                    .map_err(|e| e.to_string())?;
            }
            println!(
                "outcome: {:?} ({} rounds, {} tokens, {} edits)",
                result.outcome,
                result.rounds_used,
                result.transcript.tokens_used,
                result.ledger.edits.len()
            );
            Ok(if result.outcome == Outcome::Success { 0 } else { 1 })
        }
        Command::Kb { command } => {
            let kb_for = |project: &Path| -> Result<KnowledgeBase, String> {
                let id = project_id(project, None);
                KnowledgeBase::open(&config.state_dir, &id).map_err(|e| e.to_string())
            };
            match command {
                KbCommand::List { project, query } => {
                    let kb = kb_for(&project)?;
                    match query {
                        Some(query) => {
                            for entry in retrieve(&kb, &query, 10) {
                                println!("{}", entry.text);
                            }
                        }
                        None => {
                            for (i, entry) in kb.entries.iter().enumerate() {
                                println!("{i}. {}", entry.text);
                            }
                        }
                    }
                    Ok(0)
                }
                KbCommand::Add { project, entry } => {
                    let mut kb = kb_for(&project)?;
                    kb.stage(Entry::new(&entry));
                    kb.commit(RunOutcome::Success).map_err(|e| e.to_string())?;
                    Ok(0)
                }
                KbCommand::Rm { project, index } => {
                    let mut kb = kb_for(&project)?;
                    kb.edit(index, None).map_err(|e| e.to_string())?;
                    Ok(0)
                }
            }
        }
        Command::Eval(args) => {
            let scenarios = load_scenarios(&args.scenarios).map_err(|e| e.to_string())?;
            if scenarios.is_empty() {
                return Err(format!("no scenario bundles under {}", args.scenarios.display()));
            }
            let mut runs: BTreeMap<String, Vec<AttemptRecord>> = BTreeMap::new();
            for scenario in &scenarios {
                let script = scenario.dir.join("script.json");
                for _attempt in 0..args.attempts.max(args.k) {
                    let mut backend = ScriptedBackend::from_json_file(&script)
                        .map_err(|e| format!("{}: {e}", scenario.meta.name))?;
                    let kb_dir = tempfile::tempdir().map_err(|e| e.to_string())?;
                    let mut kb = KnowledgeBase::open(kb_dir.path(), &scenario.meta.name)
                        .map_err(|e| e.to_string())?;
                    let options = AgentOptions {
                        budget: config.budget(),
                        ignore: config.ignore_set(),
                        run_id: scenario.meta.name.clone(),
                        ..AgentOptions::default()
                    };
                    let record = run_scenario(scenario, &mut backend, &mut kb, &options)
                        .map_err(|e| format!("{}: {e}", scenario.meta.name))?;
                    runs.entry(scenario.meta.name.clone()).or_default().push(record);
                }
            }
            let report = score(&runs, args.k).map_err(|e| e.to_string())?;
            let rendered = serde_json::to_string_pretty(&report).unwrap() + "\n";
            if let Some(path) = &args.report {
                std::fs::write(path, &rendered).map_err(|e| e.to_string())?;
            }
            print!("{rendered}");
            Ok(if report.aggregate_pass_at_k >= 1.0 { 0 } else { 1 })
        }
    }
}
