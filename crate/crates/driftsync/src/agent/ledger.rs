//! Edit ledger: every workspace mutation the agent makes, replayable
//! byte-exactly over a pristine copy of the workspace.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditKind {
    /// Whole-file overwrite (or creation); `before` is the prior content.
    Write,
    /// Anchored find-and-replace; `before` is the matched span.
    Replace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edit {
    /// Path relative to the workspace root.
    pub file: PathBuf,
    pub kind: EditKind,
    pub before: Option<String>,
    pub after: String,
    pub round: usize,
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("replay anchor not found in {file}: {anchor:?}")]
    AnchorMismatch { file: PathBuf, anchor: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Ordered record of edits; replay over the initial workspace reproduces the
/// patched workspace byte-for-byte.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EditLedger {
    pub edits: Vec<Edit>,
}

impl EditLedger {
    pub fn is_empty(&self) -> bool {
        self.edits.is_empty()
    }

    pub fn record_write(&mut self, file: &Path, before: Option<String>, after: &str, round: usize) {
        self.edits.push(Edit {
            file: file.to_path_buf(),
            kind: EditKind::Write,
            before,
            after: after.to_string(),
            round,
        });
    }

    pub fn record_replace(&mut self, file: &Path, find: &str, replace: &str, round: usize) {
        self.edits.push(Edit {
            file: file.to_path_buf(),
            kind: EditKind::Replace,
            before: Some(find.to_string()),
            after: replace.to_string(),
            round,
        });
    }

    /// Applies every edit in order under `root`.
    pub fn replay(&self, root: &Path) -> Result<(), ReplayError> {
        for edit in &self.edits {
            let path = root.join(&edit.file);
            match edit.kind {
                EditKind::Write => {
                    if let Some(parent) = path.parent() {
                        std::fs::create_dir_all(parent)?;
                    }
                    std::fs::write(&path, &edit.after)?;
                }
                EditKind::Replace => {
                    let anchor = edit.before.as_deref().unwrap_or_default();
                    let content = std::fs::read_to_string(&path)?;
                    if !content.contains(anchor) {
                        return Err(ReplayError::AnchorMismatch {
                            file: edit.file.clone(),
                            anchor: anchor.to_string(),
                        });
                    }
                    std::fs::write(&path, content.replacen(anchor, &edit.after, 1))?;
                }
            }
        }
        Ok(())
    }
}

/// Copies a workspace tree (used to keep the pristine snapshot that ledger
/// replay is checked against). Hidden state dirs are skipped.
pub fn copy_tree(from: &Path, to: &Path) -> std::io::Result<()> {
    for entry in walkdir::WalkDir::new(from)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| e.file_name() != ".terraform")
    {
        let entry = entry.map_err(|e| std::io::Error::new(std::io::ErrorKind::Other, e.to_string()))?;
        let rel = entry.path().strip_prefix(from).expect("walk under root");
        let target = to.join(rel);
        if entry.file_type().is_dir() {
            std::fs::create_dir_all(&target)?;
        } else {
            if let Some(parent) = target.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::copy(entry.path(), &target)?;
        }
    }
    Ok(())
}

/// Byte-compares two trees; returns the first differing relative path.
pub fn tree_diff(a: &Path, b: &Path) -> std::io::Result<Option<PathBuf>> {
    let list = |root: &Path| -> std::io::Result<Vec<PathBuf>> {
        let mut files = Vec::new();
        for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
            let entry =
                entry.map_err(|e| std::io::Error::new(std::io::ErrorKind::Other, e.to_string()))?;
            if entry.file_type().is_file() {
                files.push(entry.path().strip_prefix(root).unwrap().to_path_buf());
            }
        }
        Ok(files)
    };
    let files_a = list(a)?;
    let files_b = list(b)?;
    for file in files_a.iter().chain(files_b.iter()) {
        let pa = a.join(file);
        let pb = b.join(file);
        if !pa.is_file() || !pb.is_file() || std::fs::read(&pa)? != std::fs::read(&pb)? {
            return Ok(Some(file.clone()));
        }
    }
    Ok(None)
}
