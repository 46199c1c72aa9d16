//! Tool registry for the reconciliation agent: file access, anchored edits,
//! allow-listed shell, drift report, self-critique, and knowledge tools.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde_json::Value;
use thiserror::Error;

use super::ledger::{copy_tree, tree_diff, EditLedger};
use crate::consolidate::DriftSet;
use crate::iac::{drift_report, load_workspace, IgnoreSet, LiveState};
use crate::knowledge::{retrieve, Entry, KnowledgeBase};

pub const TOOL_NAMES: &[&str] = &[
    "file_read",
    "file_write",
    "editor",
    "shell",
    "drift_report",
    "self_critique",
    "knowledge_retrieval",
    "knowledge_update",
    "knowledge_edit",
];

#[derive(Debug, Error)]
pub enum ToolError {
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
    #[error("missing or invalid argument `{0}`")]
    BadArgument(&'static str),
    #[error("path escapes workspace root: {0}")]
    PathEscape(String),
    #[error("file not found: {0}")]
    FileNotFound(String),
    #[error("editor anchor mismatch in {file}: {occurrences} occurrence(s) of the find text")]
    AnchorMismatch { file: String, occurrences: usize },
    #[error("command disallowed: {0}")]
    Disallowed(String),
    #[error("command timed out after {0:?}")]
    Timeout(Duration),
    #[error("drift report failed: {0}")]
    Report(String),
    #[error("knowledge error: {0}")]
    Knowledge(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Shell allow-list: read-only system binaries plus the IaC binary's
/// non-mutating subcommands.
#[derive(Debug, Clone)]
pub struct ShellPolicy {
    pub allowed_binaries: Vec<String>,
    pub iac_binary: String,
    pub iac_subcommands: Vec<String>,
    pub timeout: Duration,
    pub output_cap: usize,
}

impl Default for ShellPolicy {
    fn default() -> Self {
        ShellPolicy {
            allowed_binaries: ["ls", "cat", "grep", "find", "head", "tail", "wc", "diff"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            iac_binary: "terraform".to_string(),
            iac_subcommands: ["plan", "show", "validate", "graph", "output", "providers", "version"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            timeout: Duration::from_secs(10),
            output_cap: 4000,
        }
    }
}

impl ShellPolicy {
    /// Rejects metacharacters outright (the allow-list is on argv[0], so
    /// chaining and redirection would bypass it).
    pub fn check(&self, command: &str) -> Result<Vec<String>, ToolError> {
        if command.chars().any(|c| "|;&><`$(){}".contains(c)) {
            return Err(ToolError::Disallowed(format!("{command} (shell metacharacters)")));
        }
        let words: Vec<String> = command.split_whitespace().map(String::from).collect();
        let Some(binary) = words.first() else {
            return Err(ToolError::Disallowed("empty command".to_string()));
        };
        if self.allowed_binaries.iter().any(|b| b == binary) {
            return Ok(words);
        }
        if binary == &self.iac_binary {
            match words.get(1) {
                Some(sub) if self.iac_subcommands.contains(sub) => return Ok(words),
                Some(sub) => {
                    return Err(ToolError::Disallowed(format!(
                        "{binary} {sub} (mutating or unknown subcommand)"
                    )))
                }
                None => return Err(ToolError::Disallowed(binary.clone())),
            }
        }
        Err(ToolError::Disallowed(binary.clone()))
    }
}

/// Everything a tool call may touch.
pub struct ToolContext<'a> {
    pub root: &'a Path,
    /// Pristine snapshot of the workspace taken before the run started.
    pub pristine: &'a Path,
    pub drifts: &'a DriftSet,
    pub live: &'a dyn LiveState,
    pub ignore: &'a IgnoreSet,
    pub ledger: &'a mut EditLedger,
    pub kb: &'a mut KnowledgeBase,
    pub run_id: &'a str,
    pub shell: &'a ShellPolicy,
}

/// Result of one dispatch: observation text plus the drift-report verdict
/// when the call was `drift_report`.
pub struct ToolOutcome {
    pub observation: String,
    pub report_empty: Option<bool>,
}

impl ToolOutcome {
    fn text(observation: String) -> ToolOutcome {
        ToolOutcome { observation, report_empty: None }
    }
}

fn arg_str<'v>(args: &'v Value, key: &'static str) -> Result<&'v str, ToolError> {
    args.get(key).and_then(Value::as_str).ok_or(ToolError::BadArgument(key))
}

/// Confines a tool-supplied path to the workspace root: relative only, no
/// parent traversal.
fn safe_path(root: &Path, raw: &str) -> Result<PathBuf, ToolError> {
    let rel = Path::new(raw);
    if rel.is_absolute()
        || rel
            .components()
            .any(|c| matches!(c, std::path::Component::ParentDir | std::path::Component::RootDir))
    {
        return Err(ToolError::PathEscape(raw.to_string()));
    }
    Ok(root.join(rel))
}

fn truncate_output(text: &str, cap: usize) -> String {
    if text.len() <= cap {
        return text.to_string();
    }
    let half = cap / 2;
    let mut head_end = half.min(text.len());
    while !text.is_char_boundary(head_end) {
        head_end -= 1;
    }
    let mut tail_start = text.len() - half.min(text.len());
    while !text.is_char_boundary(tail_start) {
        tail_start += 1;
    }
    format!(
        "{}\n... [{} bytes elided] ...\n{}",
        &text[..head_end],
        tail_start - head_end,
        &text[tail_start..]
    )
}

pub fn dispatch(
    tool: &str,
    args: &Value,
    round: usize,
    ctx: &mut ToolContext<'_>,
) -> Result<ToolOutcome, ToolError> {
    match tool {
        "file_read" => file_read(args, ctx),
        "file_write" => file_write(args, round, ctx),
        "editor" => editor(args, round, ctx),
        "shell" => shell(args, ctx),
        "drift_report" => report(ctx),
        "self_critique" => Ok(ToolOutcome::text(self_critique(ctx))),
        "knowledge_retrieval" => knowledge_retrieval(args, ctx),
        "knowledge_update" => knowledge_update(args, ctx),
        "knowledge_edit" => knowledge_edit(args, ctx),
        other => Err(ToolError::UnknownTool(other.to_string())),
    }
}

fn file_read(args: &Value, ctx: &mut ToolContext<'_>) -> Result<ToolOutcome, ToolError> {
    let raw = arg_str(args, "path")?;
    let path = safe_path(ctx.root, raw)?;
    let content = std::fs::read_to_string(&path)
        .map_err(|_| ToolError::FileNotFound(raw.to_string()))?;
    let numbered: String = content
        .lines()
        .enumerate()
        .map(|(i, line)| format!("{:>4} | {line}\n", i + 1))
        .collect();
    Ok(ToolOutcome::text(truncate_output(&numbered, ctx.shell.output_cap)))
}

fn file_write(args: &Value, round: usize, ctx: &mut ToolContext<'_>) -> Result<ToolOutcome, ToolError> {
    let raw = arg_str(args, "path")?;
    let content = arg_str(args, "content")?;
    let path = safe_path(ctx.root, raw)?;
    let before = std::fs::read_to_string(&path).ok();
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(&path, content)?;
    ctx.ledger.record_write(Path::new(raw), before, content, round);
    Ok(ToolOutcome::text(format!("wrote {raw} ({} bytes)", content.len())))
}

fn editor(args: &Value, round: usize, ctx: &mut ToolContext<'_>) -> Result<ToolOutcome, ToolError> {
    let raw = arg_str(args, "path")?;
    let find = arg_str(args, "find")?;
    let replace = arg_str(args, "replace")?;
    let path = safe_path(ctx.root, raw)?;
    let content = std::fs::read_to_string(&path)
        .map_err(|_| ToolError::FileNotFound(raw.to_string()))?;
    let occurrences = content.matches(find).count();
    if occurrences != 1 {
        return Err(ToolError::AnchorMismatch { file: raw.to_string(), occurrences });
    }
    std::fs::write(&path, content.replacen(find, replace, 1))?;
    ctx.ledger.record_replace(Path::new(raw), find, replace, round);
    Ok(ToolOutcome::text(format!("edited {raw}")))
}

fn shell(args: &Value, ctx: &mut ToolContext<'_>) -> Result<ToolOutcome, ToolError> {
    let command = arg_str(args, "command")?;
    let words = ctx.shell.check(command)?;
    let mut child = std::process::Command::new(&words[0])
        .args(&words[1..])
        .current_dir(ctx.root)
        .stdout(std::process::Stdio::piped())
        .stderr(std::process::Stdio::piped())
        .stdin(std::process::Stdio::null())
        .spawn()?;
    let deadline = Instant::now() + ctx.shell.timeout;
    loop {
        match child.try_wait()? {
            Some(status) => {
                let output = child.wait_with_output()?;
                let stdout = String::from_utf8_lossy(&output.stdout);
                let stderr = String::from_utf8_lossy(&output.stderr);
                let text = format!(
                    "exit: {}\nstdout:\n{}stderr:\n{}",
                    status.code().unwrap_or(-1),
                    stdout,
                    stderr
                );
                return Ok(ToolOutcome::text(truncate_output(&text, ctx.shell.output_cap)));
            }
            None if Instant::now() >= deadline => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(ToolError::Timeout(ctx.shell.timeout));
            }
            None => std::thread::sleep(Duration::from_millis(20)),
        }
    }
}

fn report(ctx: &mut ToolContext<'_>) -> Result<ToolOutcome, ToolError> {
    let ws = load_workspace(ctx.root).map_err(|e| ToolError::Report(e.to_string()))?;
    let report = drift_report(&ws, ctx.drifts, ctx.live, ctx.ignore)
        .map_err(|e| ToolError::Report(e.to_string()))?;
    // Never truncated: the report is already trimmed to drifted resources.
    Ok(ToolOutcome { observation: report.render_text(), report_empty: Some(report.is_empty()) })
}

/// Renders the full edit ledger plus fixed interrogatives; checks ledger
/// integrity by replaying over the pristine snapshot.
pub fn self_critique(ctx: &mut ToolContext<'_>) -> String {
    let mut out = String::from("Edits made so far:\n");
    if ctx.ledger.is_empty() {
        out.push_str("  (no edits yet)\n");
    } else {
        for (i, edit) in ctx.ledger.edits.iter().enumerate() {
            let kind = match edit.kind {
                super::ledger::EditKind::Write => "write",
                super::ledger::EditKind::Replace => "replace",
            };
            out.push_str(&format!(
                "  {}. [round {}] {kind} {}\n",
                i + 1,
                edit.round,
                edit.file.display()
            ));
            if let Some(before) = &edit.before {
                for line in before.lines().take(4) {
                    out.push_str(&format!("       - {line}\n"));
                }
            }
            for line in edit.after.lines().take(4) {
                out.push_str(&format!("       + {line}\n"));
            }
        }
    }
    match verify_ledger(ctx) {
        Ok(()) => {}
        Err(detail) => {
            out.push_str(&format!("INTEGRITY VIOLATION: {detail}\n"));
        }
    }
    out.push_str(
        "For each edit, answer:\n\
         1. Is the edit correct with respect to the drift report?\n\
         2. Is the edit necessary, or does it touch resources that were not drifted?\n\
         3. Does the combined patch stay within the scope of the reported drift?\n",
    );
    out
}

fn verify_ledger(ctx: &ToolContext<'_>) -> Result<(), String> {
    let scratch = tempfile::tempdir().map_err(|e| e.to_string())?;
    copy_tree(ctx.pristine, scratch.path()).map_err(|e| e.to_string())?;
    ctx.ledger.replay(scratch.path()).map_err(|e| e.to_string())?;
    match tree_diff(scratch.path(), ctx.root).map_err(|e| e.to_string())? {
        None => Ok(()),
        Some(file) => Err(format!(
            "replaying the ledger does not reproduce the workspace (first mismatch: {})",
            file.display()
        )),
    }
}

fn knowledge_retrieval(args: &Value, ctx: &mut ToolContext<'_>) -> Result<ToolOutcome, ToolError> {
    let query = arg_str(args, "query")?;
    let k = args.get("k").and_then(Value::as_u64).unwrap_or(5) as usize;
    let hits = retrieve(ctx.kb, query, k);
    if hits.is_empty() {
        return Ok(ToolOutcome::text("no matching knowledge entries".to_string()));
    }
    let text = hits
        .iter()
        .enumerate()
        .map(|(i, e)| format!("{}. {}\n", i + 1, e.text))
        .collect::<String>();
    Ok(ToolOutcome::text(text))
}

fn knowledge_update(args: &Value, ctx: &mut ToolContext<'_>) -> Result<ToolOutcome, ToolError> {
    let text = arg_str(args, "entry")?;
    let mut entry = Entry::new(text).with_round(ctx.run_id);
    if let Some(tags) = args.get("tags").and_then(Value::as_array) {
        entry.tags = tags.iter().filter_map(Value::as_str).map(String::from).collect();
    }
    ctx.kb.stage(entry);
    Ok(ToolOutcome::text(
        "staged knowledge entry (committed only if this run succeeds)".to_string(),
    ))
}

fn knowledge_edit(args: &Value, ctx: &mut ToolContext<'_>) -> Result<ToolOutcome, ToolError> {
    let index = args
        .get("index")
        .and_then(Value::as_u64)
        .ok_or(ToolError::BadArgument("index"))? as usize;
    let new_text = args.get("new_text").and_then(Value::as_str);
    ctx.kb
        .edit(index, new_text)
        .map_err(|e| ToolError::Knowledge(e.to_string()))?;
    Ok(ToolOutcome::text(match new_text {
        Some(_) => format!("replaced knowledge entry {index}"),
        None => format!("deleted knowledge entry {index}"),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloudsim::CloudState;
    use serde_json::json;

    struct Fixture {
        root: tempfile::TempDir,
        pristine: tempfile::TempDir,
        drifts: DriftSet,
        live: CloudState,
        ignore: IgnoreSet,
        ledger: EditLedger,
        kb_dir: tempfile::TempDir,
        kb: KnowledgeBase,
        shell: ShellPolicy,
    }

    impl Fixture {
        fn new() -> Fixture {
            let root = tempfile::tempdir().unwrap();
            std::fs::write(
                root.path().join("main.tf"),
                "resource \"aws_vpc\" \"main\" {\n  cidr_block = \"10.0.0.0/16\"\n}\n",
            )
            .unwrap();
            let pristine = tempfile::tempdir().unwrap();
            copy_tree(root.path(), pristine.path()).unwrap();
            let kb_dir = tempfile::tempdir().unwrap();
            let kb = KnowledgeBase::open(kb_dir.path(), "test-project").unwrap();
            Fixture {
                root,
                pristine,
                drifts: DriftSet::default(),
                live: CloudState::new(),
                ignore: IgnoreSet::default(),
                ledger: EditLedger::default(),
                kb_dir,
                kb,
                shell: ShellPolicy::default(),
            }
        }

        fn ctx(&mut self) -> ToolContext<'_> {
            ToolContext {
                root: self.root.path(),
                pristine: self.pristine.path(),
                drifts: &self.drifts,
                live: &self.live,
                ignore: &self.ignore,
                ledger: &mut self.ledger,
                kb: &mut self.kb,
                run_id: "run-1",
                shell: &self.shell,
            }
        }
    }

    #[test]
    fn file_read_numbers_lines() {
        let mut fx = Fixture::new();
        let out = dispatch("file_read", &json!({"path": "main.tf"}), 1, &mut fx.ctx()).unwrap();
        assert!(out.observation.starts_with("   1 | resource"));
    }

    #[test]
    fn path_escape_is_rejected() {
        let mut fx = Fixture::new();
        for path in ["../outside.tf", "/etc/passwd"] {
            let err = dispatch("file_read", &json!({"path": path}), 1, &mut fx.ctx());
            assert!(matches!(err, Err(ToolError::PathEscape(_))), "{path}");
        }
        let err = dispatch(
            "file_write",
            &json!({"path": "../evil.tf", "content": "x"}),
            1,
            &mut fx.ctx(),
        );
        assert!(matches!(err, Err(ToolError::PathEscape(_))));
    }

    #[test]
    fn editor_requires_exactly_one_anchor() {
        let mut fx = Fixture::new();
        let err = dispatch(
            "editor",
            &json!({"path": "main.tf", "find": "nope", "replace": "x"}),
            1,
            &mut fx.ctx(),
        );
        assert!(matches!(err, Err(ToolError::AnchorMismatch { occurrences: 0, .. })));
        dispatch(
            "editor",
            &json!({"path": "main.tf", "find": "10.0.0.0/16", "replace": "10.1.0.0/16"}),
            1,
            &mut fx.ctx(),
        )
        .unwrap();
        assert_eq!(fx.ledger.edits.len(), 1);
    }

    #[test]
    fn writes_and_edits_are_ledgered_and_replayable() {
        let mut fx = Fixture::new();
        dispatch(
            "file_write",
            &json!({"path": "new.tf", "content": "resource \"aws_subnet\" \"a\" {}\n"}),
            1,
            &mut fx.ctx(),
        )
        .unwrap();
        dispatch(
            "editor",
            &json!({"path": "main.tf", "find": "10.0.0.0/16", "replace": "10.2.0.0/16"}),
            2,
            &mut fx.ctx(),
        )
        .unwrap();
        let scratch = tempfile::tempdir().unwrap();
        copy_tree(fx.pristine.path(), scratch.path()).unwrap();
        fx.ledger.replay(scratch.path()).unwrap();
        assert_eq!(tree_diff(scratch.path(), fx.root.path()).unwrap(), None);
    }

    #[test]
    fn shell_allow_list_blocks_mutating_commands() {
        let policy = ShellPolicy::default();
        assert!(policy.check("ls -la").is_ok());
        assert!(policy.check("terraform plan").is_ok());
        assert!(matches!(policy.check("terraform apply"), Err(ToolError::Disallowed(_))));
        assert!(matches!(policy.check("rm -rf ."), Err(ToolError::Disallowed(_))));
        assert!(matches!(policy.check("ls ; rm x"), Err(ToolError::Disallowed(_))));
        assert!(matches!(policy.check("cat f | grep x"), Err(ToolError::Disallowed(_))));
    }

    #[test]
    fn shell_runs_allowed_command_in_workspace() {
        let mut fx = Fixture::new();
        let out = dispatch("shell", &json!({"command": "ls"}), 1, &mut fx.ctx()).unwrap();
        assert!(out.observation.contains("main.tf"));
        assert!(out.observation.contains("exit: 0"));
    }

    #[test]
    fn shell_timeout_kills_the_process() {
        let mut fx = Fixture::new();
        fx.shell.timeout = Duration::from_millis(100);
        fx.shell.allowed_binaries.push("sleep".to_string());
        let err = dispatch("shell", &json!({"command": "sleep 5"}), 1, &mut fx.ctx());
        assert!(matches!(err, Err(ToolError::Timeout(_))));
    }

    #[test]
    fn drift_report_tool_returns_emptiness_flag() {
        let mut fx = Fixture::new();
        let out = dispatch("drift_report", &json!({}), 1, &mut fx.ctx()).unwrap();
        assert_eq!(out.report_empty, Some(true));
        assert_eq!(out.observation, "no drift detected\n");
    }

    #[test]
    fn self_critique_renders_edits_and_detects_corruption() {
        let mut fx = Fixture::new();
        let empty = self_critique(&mut fx.ctx());
        assert!(empty.contains("no edits yet"));
        assert!(empty.contains("necessary"));

        dispatch(
            "editor",
            &json!({"path": "main.tf", "find": "10.0.0.0/16", "replace": "10.3.0.0/16"}),
            1,
            &mut fx.ctx(),
        )
        .unwrap();
        let rendered = self_critique(&mut fx.ctx());
        assert!(rendered.contains("replace main.tf"));
        assert!(!rendered.contains("INTEGRITY VIOLATION"));

        // Out-of-band corruption: the ledger no longer explains the tree.
        std::fs::write(fx.root.path().join("main.tf"), "tampered\n").unwrap();
        let corrupted = self_critique(&mut fx.ctx());
        assert!(corrupted.contains("INTEGRITY VIOLATION"));
    }

    #[test]
    fn knowledge_tools_stage_and_retrieve() {
        let mut fx = Fixture::new();
        dispatch(
            "knowledge_update",
            &json!({"entry": "escape the log_format string", "tags": ["logging"]}),
            1,
            &mut fx.ctx(),
        )
        .unwrap();
        assert_eq!(fx.kb.staged().len(), 1);
        // Staged entries are not retrievable until committed.
        let out =
            dispatch("knowledge_retrieval", &json!({"query": "log_format"}), 2, &mut fx.ctx())
                .unwrap();
        assert!(out.observation.contains("no matching"));
        fx.kb.commit(crate::knowledge::RunOutcome::Success).unwrap();
        let out =
            dispatch("knowledge_retrieval", &json!({"query": "log_format"}), 3, &mut fx.ctx())
                .unwrap();
        assert!(out.observation.contains("escape the log_format"));
        drop(fx.kb_dir);
    }

    #[test]
    fn unknown_tool_is_an_error() {
        let mut fx = Fixture::new();
        assert!(matches!(
            dispatch("terraform_apply", &json!({}), 1, &mut fx.ctx()),
            Err(ToolError::UnknownTool(_))
        ));
    }

    #[test]
    fn truncation_keeps_head_and_tail() {
        let text = "a".repeat(3000) + &"b".repeat(3000);
        let out = truncate_output(&text, 1000);
        assert!(out.len() < 1200);
        assert!(out.starts_with("aaa"));
        assert!(out.ends_with("bbb"));
        assert!(out.contains("elided"));
    }
}
