//! Project-scoped knowledge base: a plain text file of reconciliation
//! insights, staged during a run and committed only when the run succeeds.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One recorded insight.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_round: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
}

impl Entry {
    pub fn new(text: &str) -> Entry {
        Entry {
            text: text.replace('\n', " ").trim().to_string(),
            created_round: None,
            tags: Vec::new(),
        }
    }

    pub fn with_round(mut self, round: &str) -> Entry {
        self.created_round = Some(round.to_string());
        self
    }

    pub fn with_tags(mut self, tags: &[&str]) -> Entry {
        self.tags = tags.iter().map(|t| t.to_string()).collect();
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunOutcome {
    Success,
    Failure,
}

#[derive(Debug, Error)]
pub enum KnowledgeError {
    #[error("knowledge storage error: {0}")]
    Storage(String),
    #[error("entry index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("knowledge base for project {0} is locked by another writer")]
    Locked(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-project knowledge base. Persisted entries live at
/// `<state-dir>/kb/<project_id>.txt`; staged entries live in memory until
/// `commit(Success)`.
#[derive(Debug)]
pub struct KnowledgeBase {
    pub project_id: String,
    pub entries: Vec<Entry>,
    staged: Vec<Entry>,
    path: PathBuf,
}

fn kb_path(state_dir: &Path, project_id: &str) -> PathBuf {
    state_dir.join("kb").join(format!("{project_id}.txt"))
}

fn parse_entries(text: &str) -> Vec<Entry> {
    let mut entries = Vec::new();
    for block in text.split("\n\n") {
        let mut lines = block.lines().filter(|l| !l.trim().is_empty());
        let Some(first) = lines.next() else { continue };
        let mut entry = Entry::new(first);
        for trailer in lines {
            let trailer = trailer.trim();
            if let Some(tags) = trailer.strip_prefix("#tags:") {
                entry.tags =
                    tags.split(',').map(str::trim).filter(|t| !t.is_empty()).map(String::from).collect();
            } else if let Some(round) = trailer.strip_prefix("#round:") {
                entry.created_round = Some(round.trim().to_string());
            }
        }
        entries.push(entry);
    }
    entries
}

fn render_entries(entries: &[Entry]) -> String {
    let mut blocks = Vec::new();
    for entry in entries {
        let mut block = entry.text.clone();
        if let Some(round) = &entry.created_round {
            block.push_str(&format!("\n#round: {round}"));
        }
        if !entry.tags.is_empty() {
            block.push_str(&format!("\n#tags: {}", entry.tags.join(", ")));
        }
        blocks.push(block);
    }
    let mut out = blocks.join("\n\n");
    if !out.is_empty() {
        out.push('\n');
    }
    out
}

impl KnowledgeBase {
    /// Opens (or initializes empty) the KB for a project. Never creates the
    /// file; that happens at the first successful commit.
    pub fn open(state_dir: &Path, project_id: &str) -> Result<KnowledgeBase, KnowledgeError> {
        let path = kb_path(state_dir, project_id);
        let entries = match fs::read_to_string(&path) {
            Ok(text) => parse_entries(&text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(KnowledgeError::Io(e)),
        };
        Ok(KnowledgeBase { project_id: project_id.to_string(), entries, staged: Vec::new(), path })
    }

    pub fn staged(&self) -> &[Entry] {
        &self.staged
    }

    /// Stages an insight for this run. Nothing touches disk until `commit`.
    pub fn stage(&mut self, entry: Entry) {
        self.staged.push(entry);
    }

    /// Commits staged entries on success; discards them on failure. Duplicate
    /// normalized texts are dropped. The write is atomic (temp file + rename)
    /// and guarded by a per-project advisory lock.
    pub fn commit(&mut self, outcome: RunOutcome) -> Result<usize, KnowledgeError> {
        if outcome == RunOutcome::Failure {
            self.staged.clear();
            return Ok(0);
        }
        let mut seen: BTreeSet<String> =
            self.entries.iter().map(|e| normalize_text(&e.text)).collect();
        let mut accepted = Vec::new();
        for entry in &self.staged {
            let key = normalize_text(&entry.text);
            if key.is_empty() || seen.contains(&key) {
                continue;
            }
            seen.insert(key);
            accepted.push(entry.clone());
        }
        if accepted.is_empty() {
            self.staged.clear();
            return Ok(0);
        }
        let added = accepted.len();
        self.entries.extend(accepted);
        match self.persist() {
            Ok(()) => {
                self.staged.clear();
                Ok(added)
            }
            Err(e) => {
                // Keep the in-memory view consistent with disk on failure.
                self.entries.truncate(self.entries.len() - added);
                Err(e)
            }
        }
    }

    /// Replaces or deletes one entry by index and persists immediately.
    pub fn edit(&mut self, index: usize, new_text: Option<&str>) -> Result<(), KnowledgeError> {
        if index >= self.entries.len() {
            return Err(KnowledgeError::IndexOutOfRange { index, len: self.entries.len() });
        }
        match new_text {
            Some(text) => self.entries[index].text = Entry::new(text).text,
            None => {
                self.entries.remove(index);
            }
        }
        self.persist()
    }

    fn persist(&self) -> Result<(), KnowledgeError> {
        let _lock = AdvisoryLock::acquire(&self.path, &self.project_id)?;
        if let Some(parent) = self.path.parent() {
            fs::create_dir_all(parent)?;
        }
        let tmp = self.path.with_extension("txt.tmp");
        fs::write(&tmp, render_entries(&self.entries))?;
        fs::rename(&tmp, &self.path)?;
        Ok(())
    }
}

/// Single-writer guard: `<kb-file>.lock` created with `create_new`; dropped
/// on scope exit. Readers never take it.
struct AdvisoryLock {
    path: PathBuf,
}

impl AdvisoryLock {
    fn acquire(kb_path: &Path, project_id: &str) -> Result<AdvisoryLock, KnowledgeError> {
        let path = kb_path.with_extension("txt.lock");
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(AdvisoryLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(KnowledgeError::Locked(project_id.to_string()))
            }
            Err(e) => Err(KnowledgeError::Io(e)),
        }
    }
}

impl Drop for AdvisoryLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn normalize_text(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(String::from)
        .collect()
}

/// Lexical term-frequency retrieval: entries scored by overlap with the
/// query's token set (tags count too), ranked descending, zero-score entries
/// dropped, capped at `k`.
pub fn retrieve<'a>(kb: &'a KnowledgeBase, query: &str, k: usize) -> Vec<&'a Entry> {
    let query_tokens: BTreeSet<String> = tokens(query).into_iter().collect();
    if query_tokens.is_empty() {
        return Vec::new();
    }
    let mut scored: Vec<(usize, usize, &Entry)> = kb
        .entries
        .iter()
        .enumerate()
        .filter_map(|(index, entry)| {
            let mut entry_tokens = tokens(&entry.text);
            for tag in &entry.tags {
                entry_tokens.extend(tokens(tag));
            }
            let score = entry_tokens.iter().filter(|t| query_tokens.contains(*t)).count();
            (score > 0).then_some((score, index, entry))
        })
        .collect();
    scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.into_iter().take(k).map(|(_, _, e)| e).collect()
}
