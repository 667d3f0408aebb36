//! Session directories as served: the base store written by `init`, an
//! optional rotated checkpoint, and the journal.
//!
//! ```text
//! session/
//!   manifest.json ...     base store
//!   checkpoint/           latest checkpoint (preferred over the base)
//!   checkpoint.old/       previous checkpoint, only during rotation
//!   journal.jsonl         mutations since the checkpoint
//!   frames/<camera>/<frame>.jpg|png
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use pedlabel_core::editops::{Applied, EditError, EditOp};
use pedlabel_core::model::Session;
use pedlabel_core::store::{self, StoreError, MANIFEST};

use crate::journal::{self, Command, Entry, Journal, JournalError};

const CHECKPOINT: &str = "checkpoint";
const CHECKPOINT_OLD: &str = "checkpoint.old";
const CHECKPOINT_TMP: &str = "checkpoint.tmp";

#[derive(Debug, thiserror::Error)]
pub enum DirError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0} is not a session directory")]
    NotSession(PathBuf),
    #[error("session id {id} is served from both {first} and {second}")]
    Duplicate { id: String, first: PathBuf, second: PathBuf },
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> DirError + '_ {
    move |source| DirError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn is_session_dir(dir: &Path) -> bool {
    [dir.to_path_buf(), dir.join(CHECKPOINT), dir.join(CHECKPOINT_OLD)]
        .iter()
        .any(|d| d.join(MANIFEST).is_file())
}

/// Loads the newest durable snapshot and replays the journal on top.
pub fn load_dir(dir: &Path) -> Result<Session, DirError> {
    let mut first_err = None;
    let mut session = None;
    for candidate in [dir.join(CHECKPOINT), dir.join(CHECKPOINT_OLD), dir.to_path_buf()] {
        if !candidate.join(MANIFEST).is_file() {
            continue;
        }
        match store::load_session(&candidate) {
            Ok(s) => {
                session = Some(s);
                break;
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    let mut session = match (session, first_err) {
        (Some(s), _) => s,
        (None, Some(e)) => return Err(e.into()),
        (None, None) => return Err(DirError::NotSession(dir.to_path_buf())),
    };
    journal::recover(&mut session, dir)?;
    Ok(session)
}

/// Writes `session` as the new checkpoint and empties the journal. Every
/// intermediate state on disk loads to either the old or the new state.
pub fn save_dir(dir: &Path, session: &Session) -> Result<(), DirError> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    let tmp = dir.join(CHECKPOINT_TMP);
    let cur = dir.join(CHECKPOINT);
    let old = dir.join(CHECKPOINT_OLD);
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(io(&tmp))?;
    }
    store::save_session(session, &tmp)?;
    if cur.exists() {
        if old.exists() {
            fs::remove_dir_all(&old).map_err(io(&old))?;
        }
        fs::rename(&cur, &old).map_err(io(&cur))?;
    }
    fs::rename(&tmp, &cur).map_err(io(&tmp))?;
    fs::File::open(dir).and_then(|d| d.sync_all()).map_err(io(dir))?;
    if old.exists() {
        fs::remove_dir_all(&old).map_err(io(&old))?;
    }
    Journal::open(dir)?.truncate()?;
    Ok(())
}

/// Why a mutation was refused.
#[derive(Debug, thiserror::Error)]
pub enum SubmitError {
    #[error("client_seq {client_seq} is stale; session is at revision {revision}")]
    Stale { client_seq: u64, revision: u64 },
    #[error(transparent)]
    Rejected(#[from] EditError),
    #[error(transparent)]
    Journal(#[from] JournalError),
}

pub enum Mutation {
    Edit(EditOp),
    Undo,
    Redo,
}

/// One served session: readers take the current immutable snapshot, and a
/// single writer at a time builds the next one.
pub struct SessionHandle {
    pub dir: PathBuf,
    current: RwLock<Arc<Session>>,
    writer: tokio::sync::Mutex<Journal>,
}

impl SessionHandle {
    pub fn open(dir: &Path) -> Result<SessionHandle, DirError> {
        let session = load_dir(dir)?;
        Ok(SessionHandle {
            dir: dir.to_path_buf(),
            current: RwLock::new(Arc::new(session)),
            writer: tokio::sync::Mutex::new(Journal::open(dir)?),
        })
    }

    pub fn snapshot(&self) -> Arc<Session> {
        self.current.read().expect("snapshot lock").clone()
    }

    /// Applies a mutation if `client_seq` equals the current revision. The
    /// journal entry is on disk before the new state becomes visible.
    pub async fn submit(&self, client_seq: u64, mutation: Mutation) -> Result<Applied, SubmitError> {
        let mut journal = self.writer.lock().await;
        let current = self.snapshot();
        let revision = current.action_log.revision;
        if client_seq != revision {
            return Err(SubmitError::Stale { client_seq, revision });
        }
        let mut next = (*current).clone();
        let command = match mutation {
            Mutation::Edit(op) => {
                let timestamp = pedlabel_core::editops::timestamp_now();
                Command::Edit { timestamp, op }
            }
            Mutation::Undo => Command::Undo,
            Mutation::Redo => Command::Redo,
        };
        let applied = journal::execute(&mut next, &command)?;
        journal.append(&Entry {
            revision: applied.revision,
            command,
        })?;
        *self.current.write().expect("snapshot lock") = Arc::new(next);
        Ok(applied)
    }

    /// Folds the journal into a checkpoint.
    pub async fn checkpoint(&self) -> Result<(), DirError> {
        let _writer = self.writer.lock().await;
        save_dir(&self.dir, &self.snapshot())
    }
}

#[derive(Default)]
pub struct Registry {
    pub sessions: BTreeMap<String, Arc<SessionHandle>>,
}

impl Registry {
    /// Serves each directory in `dirs`; a directory that is not itself a
    /// session is scanned one level deep for sessions.
    pub fn open(dirs: &[PathBuf]) -> Result<Registry, DirError> {
        let mut found = Vec::new();
        for dir in dirs {
            if is_session_dir(dir) {
                found.push(dir.clone());
                continue;
            }
            let mut children: Vec<PathBuf> = fs::read_dir(dir)
                .map_err(io(dir))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_dir() && is_session_dir(p))
                .collect();
            if children.is_empty() {
                return Err(DirError::NotSession(dir.clone()));
            }
            children.sort();
            found.extend(children);
        }
        let mut reg = Registry::default();
        for dir in found {
            let handle = SessionHandle::open(&dir)?;
            let id = handle.snapshot().session_id.clone();
            if let Some(prev) = reg.sessions.get(&id) {
                return Err(DirError::Duplicate {
                    id,
                    first: prev.dir.clone(),
                    second: dir,
                });
            }
            reg.sessions.insert(id, Arc::new(handle));
        }
        Ok(reg)
    }

    pub fn get(&self, id: &str) -> Option<&Arc<SessionHandle>> {
        self.sessions.get(id)
    }
}
