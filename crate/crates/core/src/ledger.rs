//! Append-only transaction log and deterministic replay.
//!
//! File format: one canonical-JSON [`LedgerEntry`] per line, UTF-8, with
//! lowercase hex digests. Rejected steps are logged as well; their
//! `post_digest` equals their `pre_digest`.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adapter::{verify_sync, AdapterError, SystemAdapter};
use crate::digest::Digest;
use crate::engine::{Engine, EngineError, StepOutcome};
use crate::scr::{canonical_json, scr_digest, Scr};
use crate::validation::Proposal;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LedgerEntry {
    pub step_index: u64,
    pub pre_digest: Digest,
    /// The proposal exactly as received: canonical document bytes, or the
    /// raw reply when it never parsed.
    pub proposal_canonical: String,
    pub outcome: StepOutcome,
    pub post_digest: Digest,
}

#[derive(Debug, thiserror::Error)]
pub enum LedgerError {
    #[error("step index gap: expected {expected}, got {got}")]
    IndexGap { expected: u64, got: u64 },
    #[error("ledger io failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt ledger line {line}: {message}")]
    Corrupt { line: usize, message: String },
}

/// A ledger, optionally backed by a file.
#[derive(Debug, Default)]
pub struct Ledger {
    path: Option<PathBuf>,
    entries: Vec<LedgerEntry>,
}

impl Ledger {
    pub fn in_memory() -> Self {
        Ledger::default()
    }

    /// Opens (creating if absent) a file-backed ledger and loads its entries.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, LedgerError> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new().create(true).append(true).read(true).open(&path)?;
        let mut entries: Vec<LedgerEntry> = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let entry: LedgerEntry = serde_json::from_str(&line)
                .map_err(|e| LedgerError::Corrupt { line: i + 1, message: e.to_string() })?;
            if entry.step_index != entries.len() as u64 {
                return Err(LedgerError::Corrupt { line: i + 1, message: "step index out of sequence".into() });
            }
            entries.push(entry);
        }
        Ok(Ledger { path: Some(path), entries })
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn next_index(&self) -> u64 {
        self.entries.len() as u64
    }

    pub fn append(&mut self, entry: LedgerEntry) -> Result<(), LedgerError> {
        let expected = self.next_index();
        if entry.step_index != expected {
            return Err(LedgerError::IndexGap { expected, got: entry.step_index });
        }
        if let Some(path) = &self.path {
            let mut line = canonical_json(&entry);
            line.push(b'\n');
            let mut file = OpenOptions::new().append(true).open(path)?;
            file.write_all(&line)?;
            file.sync_data()?;
        }
        self.entries.push(entry);
        Ok(())
    }

    /// Writes every entry to `path`, replacing its contents.
    pub fn save_as(&self, path: impl AsRef<Path>) -> Result<(), LedgerError> {
        let mut file = File::create(path)?;
        for e in &self.entries {
            file.write_all(&canonical_json(e))?;
            file.write_all(b"\n")?;
        }
        file.sync_data()?;
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("replay diverged at step {step}: {reason}")]
    Divergence { step: u64, reason: String },
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Re-executes a ledger from `initial` and checks every recorded digest.
pub fn replay(
    engine: &Engine,
    initial: &Scr,
    ledger: &[LedgerEntry],
    adapter: &mut dyn SystemAdapter,
) -> Result<Scr, ReplayError> {
    let first = ledger.first().map_or(0, |e| e.step_index);
    let drift = verify_sync(initial, adapter, &engine.config)?;
    if let Some(m) = drift.first() {
        return Err(ReplayError::Divergence {
            step: first,
            reason: format!("system differs from initial document at {:?} ({:?})", m.id, m.kind),
        });
    }
    let mut current = initial.clone();
    for entry in ledger {
        let step = entry.step_index;
        let pre = scr_digest(&current);
        if pre != entry.pre_digest {
            return Err(ReplayError::Divergence {
                step,
                reason: format!("pre digest {pre} != recorded {}", entry.pre_digest),
            });
        }
        let (next, accepted) = match Proposal::parse(entry.proposal_canonical.as_bytes()) {
            Ok(p) => {
                let (next, outcome) = engine.step(&current, &p, adapter)?;
                (next, outcome.accepted)
            }
            Err(_) => (current.clone(), false),
        };
        if accepted != entry.outcome.accepted {
            return Err(ReplayError::Divergence {
                step,
                reason: format!("recorded accepted={} but replay accepted={accepted}", entry.outcome.accepted),
            });
        }
        let post = scr_digest(&next);
        if post != entry.post_digest {
            return Err(ReplayError::Divergence {
                step,
                reason: format!("post digest {post} != recorded {}", entry.post_digest),
            });
        }
        current = next;
    }
    Ok(current)
}
