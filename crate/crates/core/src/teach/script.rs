//! Deterministic replay of teaching scripts.
//!
//! A script holds one statement per line. Blank lines and lines starting
//! with `#` are skipped; `@snapshot <name>` records a copy of the knowledge
//! base at that point.

use thiserror::Error;

use super::session::{Session, SessionError};
use crate::kb::KnowledgeBase;

/// A named copy of the knowledge base taken during a replay.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub name: String,
    pub line: usize,
    pub kb: KnowledgeBase,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Replay {
    pub kb: KnowledgeBase,
    pub snapshots: Vec<Snapshot>,
    pub session: Session,
}

impl Replay {
    pub fn snapshot(&self, name: &str) -> Option<&KnowledgeBase> {
        self.snapshots.iter().find(|s| s.name == name).map(|s| &s.kb)
    }
}

/// The first failing line of a script.
#[derive(Clone, Debug, PartialEq, Error)]
#[error("line {line}: {error}")]
pub struct ScriptError {
    pub line: usize,
    pub error: SessionError,
}

/// Feeds `script` line by line through a fresh session over `kb`.
pub fn replay_script(kb: KnowledgeBase, script: &str) -> Result<Replay, ScriptError> {
    let mut kb = kb;
    let mut session = Session::new("script");
    let mut snapshots = Vec::new();
    for (i, raw) in script.lines().enumerate() {
        let line = i + 1;
        let text = raw.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        if let Some(rest) = text.strip_prefix("@snapshot") {
            let name = rest.trim();
            if name.is_empty() {
                return Err(ScriptError {
                    line,
                    error: SessionError::Protocol("@snapshot needs a name".into()),
                });
            }
            snapshots.push(Snapshot { name: name.to_string(), line, kb: kb.clone() });
            continue;
        }
        let reply = session.step_at(&mut kb, raw.trim_end(), line);
        if let Some(error) = reply.error {
            return Err(ScriptError { line, error });
        }
    }
    Ok(Replay { kb, snapshots, session })
}
