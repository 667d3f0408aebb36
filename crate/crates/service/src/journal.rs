//! Per-session write-ahead journal.
//!
//! Each acknowledged mutation is one JSON line, flushed to disk before the
//! response is sent. On open, entries newer than the snapshot's revision are
//! replayed. A torn final line (crash mid-write, never acknowledged) is
//! dropped.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use pedlabel_core::editops::{self, EditError, EditOp};
use pedlabel_core::model::Session;
use serde::{Deserialize, Serialize};

pub const JOURNAL: &str = "journal.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Command {
    Edit { timestamp: String, op: EditOp },
    Undo,
    Redo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    /// Log revision after the command.
    pub revision: u64,
    pub command: Command,
}

#[derive(Debug, thiserror::Error)]
pub enum JournalError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path} line {line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
}

pub fn execute(session: &mut Session, command: &Command) -> Result<editops::Applied, EditError> {
    match command {
        Command::Edit { timestamp, op } => editops::apply_at(session, op.clone(), timestamp.clone()),
        Command::Undo => editops::undo(session),
        Command::Redo => editops::redo(session),
    }
}

pub struct Journal {
    path: PathBuf,
    file: File,
}

impl Journal {
    pub fn open(dir: &Path) -> Result<Journal, JournalError> {
        let path = dir.join(JOURNAL);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|source| JournalError::Io { path: path.clone(), source })?;
        Ok(Journal { path, file })
    }

    pub fn append(&mut self, entry: &Entry) -> Result<(), JournalError> {
        let mut line = serde_json::to_vec(entry).expect("journal entries serialize");
        line.push(b'\n');
        let io = |source| JournalError::Io {
            path: self.path.clone(),
            source,
        };
        self.file.write_all(&line).map_err(io)?;
        self.file.sync_data().map_err(io)
    }

    /// Empties the journal once its entries are captured in a snapshot.
    pub fn truncate(&mut self) -> Result<(), JournalError> {
        let io = |source| JournalError::Io {
            path: self.path.clone(),
            source,
        };
        self.file.set_len(0).map_err(io)?;
        self.file.sync_all().map_err(io)
    }
}

/// Parsed entries and the byte length of the intact prefix.
pub fn read_entries(dir: &Path) -> Result<(Vec<Entry>, u64), JournalError> {
    let path = dir.join(JOURNAL);
    let text = match fs::read(&path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((Vec::new(), 0)),
        Err(source) => return Err(JournalError::Io { path, source }),
    };
    let mut out = Vec::new();
    let mut offset = 0;
    let mut line_no = 0;
    while offset < text.len() {
        line_no += 1;
        let end = text[offset..].iter().position(|b| *b == b'\n').map(|p| offset + p);
        let line = &text[offset..end.unwrap_or(text.len())];
        let parsed = serde_json::from_slice::<Entry>(line);
        match (parsed, end) {
            (Ok(e), Some(end)) => {
                out.push(e);
                offset = end + 1;
            }
            // Unterminated or unparsable last line: a write the crash cut short.
            (_, None) => break,
            (Err(_), Some(end)) if end + 1 == text.len() => break,
            (Err(e), Some(_)) => {
                return Err(JournalError::Corrupt {
                    path,
                    line: line_no,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok((out, offset as u64))
}

/// Applies journal entries newer than the session's revision.
pub fn recover(session: &mut Session, dir: &Path) -> Result<usize, JournalError> {
    let path = dir.join(JOURNAL);
    let (entries, intact) = read_entries(dir)?;
    if path.exists() && fs::metadata(&path).map(|m| m.len()).unwrap_or(0) > intact {
        let io = |source| JournalError::Io { path: path.clone(), source };
        let f = OpenOptions::new().write(true).open(&path).map_err(io)?;
        f.set_len(intact).map_err(io)?;
        f.sync_all().map_err(io)?;
    }
    let mut applied = 0;
    for (i, entry) in entries.iter().enumerate() {
        if entry.revision <= session.action_log.revision {
            continue;
        }
        let corrupt = |message: String| JournalError::Corrupt {
            path: path.clone(),
            line: i + 1,
            message,
        };
        let result = execute(session, &entry.command).map_err(|e| corrupt(e.to_string()))?;
        if result.revision != entry.revision {
            return Err(corrupt(format!(
                "replay reached revision {}, journal says {}",
                result.revision, entry.revision
            )));
        }
        applied += 1;
    }
    Ok(applied)
}
