//! The trusted layer binding protocol intents to a concrete system.
//!
//! An adapter exposes a flat listing of paths with kinds, sizes and digests,
//! raw reads, and a single-transaction mutation interface. Everything the
//! agent sees is derived from here; nothing the agent sends is trusted.

mod fs;
mod virtual_fs;

pub use fs::FsAdapter;
pub use virtual_fs::{Fault, Manifest, ManifestFile, VirtualAdapter};

use std::collections::{BTreeMap, BTreeSet};

use globset::{GlobBuilder, GlobSet, GlobSetBuilder};
use serde::{Deserialize, Serialize};

use crate::digest::Digest;
use crate::scr::{parent_id, Component, Fidelity, Kind, Request, Scr};
use crate::validation::{ActionSet, ViolationCode};

pub const DEFAULT_MAX_FILE_BYTES: u64 = 1 << 20;
pub const DEFAULT_SUMMARY_MAX_LINES: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AdapterError {
    #[error("unknown component {0:?}")]
    UnknownComponent(String),
    #[error("{path:?} is {size} bytes, over the {limit}-byte limit")]
    TooLarge { path: String, size: u64, limit: u64 },
    #[error("{0:?} is not UTF-8 text")]
    Unsupported(String),
    #[error("{path:?}: {message}")]
    Conflict { path: String, message: String },
    #[error("io failure at {path:?}: {message}")]
    Io { path: String, message: String },
    #[error("injected fault at {0:?}")]
    Injected(String),
    #[error("no transaction in progress")]
    NoTransaction,
    #[error("a transaction is already in progress")]
    TransactionActive,
    #[error("bad ignore glob {0:?}")]
    BadGlob(String),
}

impl AdapterError {
    pub fn code(&self) -> ViolationCode {
        match self {
            AdapterError::UnknownComponent(_) => ViolationCode::UnknownComponent,
            AdapterError::TooLarge { .. } => ViolationCode::TooLarge,
            AdapterError::Unsupported(_) => ViolationCode::UnsupportedContent,
            _ => ViolationCode::IoFailure,
        }
    }

    pub fn path(&self) -> &str {
        match self {
            AdapterError::UnknownComponent(p)
            | AdapterError::Unsupported(p)
            | AdapterError::Injected(p)
            | AdapterError::TooLarge { path: p, .. }
            | AdapterError::Conflict { path: p, .. }
            | AdapterError::Io { path: p, .. } => p,
            _ => "",
        }
    }

    pub(crate) fn io(path: &str, err: impl std::fmt::Display) -> Self {
        AdapterError::Io { path: path.to_owned(), message: err.to_string() }
    }
}

/// One path reported by an adapter. The root itself is never listed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub path: String,
    pub kind: Kind,
    pub size: u64,
    /// Files only.
    pub digest: Option<Digest>,
    /// Modification stamp; only its ordering is meaningful.
    pub modified: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Mutation {
    Edit { content: String },
    Write { content: String },
    Delete,
}

/// The adapter contract.
///
/// `list_tree` returns every path under the root sorted by path. Mutations
/// are only accepted between `begin` and `commit`/`rollback`, and become
/// visible to `list_tree`/`read_bytes` only after `commit`.
pub trait SystemAdapter {
    fn list_tree(&self) -> Result<Vec<Entry>, AdapterError>;

    fn read_bytes(&self, path: &str) -> Result<Vec<u8>, AdapterError>;

    fn read(&self, path: &str) -> Result<String, AdapterError> {
        String::from_utf8(self.read_bytes(path)?).map_err(|_| AdapterError::Unsupported(path.to_owned()))
    }

    fn begin(&mut self) -> Result<(), AdapterError>;

    fn apply(&mut self, path: &str, mutation: &Mutation) -> Result<(), AdapterError>;

    fn commit(&mut self) -> Result<(), AdapterError>;

    fn rollback(&mut self) -> Result<(), AdapterError>;
}

/// Produces summary text for the `summary` fidelity level.
pub trait Summarizer: Send + Sync {
    fn summarize(&self, id: &str, content: &str, max_lines: usize) -> String;
}

/// A header line with size and line count, followed by leading lines of the
/// file, never exceeding `max_lines` lines in total.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExtractiveSummarizer;

impl Summarizer for ExtractiveSummarizer {
    fn summarize(&self, id: &str, content: &str, max_lines: usize) -> String {
        let total = content.lines().count();
        let mut out = format!("file {id}: {} bytes, {total} lines", content.len());
        for line in content.lines().take(max_lines.saturating_sub(1)) {
            out.push('\n');
            out.push_str(line);
        }
        out
    }
}

/// Compiled ignore patterns. A path is ignored when it or any ancestor
/// matches; `*` does not cross `/`.
#[derive(Debug, Clone)]
pub struct IgnoreRules {
    patterns: Vec<String>,
    set: GlobSet,
}

impl IgnoreRules {
    pub fn new(patterns: &[String]) -> Result<Self, AdapterError> {
        let mut builder = GlobSetBuilder::new();
        for p in patterns {
            let glob =
                GlobBuilder::new(p).literal_separator(true).build().map_err(|_| AdapterError::BadGlob(p.clone()))?;
            builder.add(glob);
        }
        let set = builder.build().map_err(|e| AdapterError::BadGlob(e.to_string()))?;
        Ok(IgnoreRules { patterns: patterns.to_vec(), set })
    }

    pub fn patterns(&self) -> &[String] {
        &self.patterns
    }

    pub fn is_ignored(&self, path: &str) -> bool {
        let mut cursor = Some(path);
        while let Some(p) = cursor {
            if p.is_empty() {
                break;
            }
            if self.set.is_match(p) {
                return true;
            }
            cursor = parent_id(p);
        }
        false
    }
}

impl Default for IgnoreRules {
    fn default() -> Self {
        IgnoreRules::new(&[]).expect("empty glob set")
    }
}

#[derive(Debug, Clone)]
pub struct MapConfig {
    pub ignore: IgnoreRules,
    pub max_file_bytes: u64,
    pub summary_max_lines: usize,
}

impl MapConfig {
    pub fn new(ignore_globs: &[String], max_file_bytes: u64, summary_max_lines: usize) -> Result<Self, AdapterError> {
        if summary_max_lines < 1 {
            return Err(AdapterError::Conflict {
                path: String::new(),
                message: "summary_max_lines must be at least 1".into(),
            });
        }
        Ok(MapConfig { ignore: IgnoreRules::new(ignore_globs)?, max_file_bytes, summary_max_lines })
    }
}

impl Default for MapConfig {
    fn default() -> Self {
        MapConfig {
            ignore: IgnoreRules::default(),
            max_file_bytes: DEFAULT_MAX_FILE_BYTES,
            summary_max_lines: DEFAULT_SUMMARY_MAX_LINES,
        }
    }
}

/// The adapter listing with ignored paths removed. A directory is kept if it
/// is empty on the system or still has at least one visible descendant.
pub fn visible_entries(adapter: &dyn SystemAdapter, config: &MapConfig) -> Result<Vec<Entry>, AdapterError> {
    let all = adapter.list_tree()?;
    let mut nonempty: BTreeSet<&str> = BTreeSet::new();
    for e in &all {
        if let Some(p) = parent_id(&e.path) {
            nonempty.insert(p);
        }
    }
    let kept: Vec<&Entry> = all.iter().filter(|e| !config.ignore.is_ignored(&e.path)).collect();
    let mut has_visible_child: BTreeSet<String> = BTreeSet::new();
    for e in &kept {
        let mut cursor = parent_id(&e.path);
        while let Some(p) = cursor {
            if !has_visible_child.insert(p.to_owned()) {
                break;
            }
            cursor = parent_id(p);
        }
    }
    Ok(kept
        .into_iter()
        .filter(|e| e.kind == Kind::File || !nonempty.contains(e.path.as_str()) || has_visible_child.contains(&e.path))
        .cloned()
        .collect())
}

/// The revision-0 latent map: structure, sizes and digests, no content.
pub fn build_latent_map(adapter: &dyn SystemAdapter, config: &MapConfig, task: &str) -> Result<Scr, AdapterError> {
    let nodes = visible_entries(adapter, config)?.into_iter().map(entry_to_component);
    Ok(Scr::from_flat(0, task, nodes))
}

fn entry_to_component(e: Entry) -> Component {
    match e.kind {
        Kind::Directory => Component::directory(e.path),
        Kind::File => Component::latent_file(e.path, e.digest.unwrap_or_else(|| Digest::of_str("")), e.size),
    }
}

/// What a provide request returns for one file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provided {
    pub summary: Option<String>,
    pub content: Option<String>,
    pub digest: Digest,
}

pub fn provide_content(
    adapter: &dyn SystemAdapter,
    config: &MapConfig,
    summarizer: &dyn Summarizer,
    id: &str,
    target: Fidelity,
) -> Result<Provided, AdapterError> {
    if config.ignore.is_ignored(id) {
        return Err(AdapterError::UnknownComponent(id.to_owned()));
    }
    let entries = adapter.list_tree()?;
    let entry = entries
        .iter()
        .find(|e| e.path == id && e.kind == Kind::File)
        .ok_or_else(|| AdapterError::UnknownComponent(id.to_owned()))?;
    if entry.size > config.max_file_bytes {
        return Err(AdapterError::TooLarge { path: id.to_owned(), size: entry.size, limit: config.max_file_bytes });
    }
    let content = adapter.read(id)?;
    let digest = Digest::of_str(&content);
    let summary = (target >= Fidelity::Summary).then(|| summarizer.summarize(id, &content, config.summary_max_lines));
    let content = (target == Fidelity::Full).then_some(content);
    Ok(Provided { summary, content, digest })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MismatchKind {
    MissingInSystem,
    MissingInScr,
    DigestDrift,
    KindConflict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mismatch {
    pub id: String,
    pub kind: MismatchKind,
}

/// Compares a document against the system. Empty means synchronized.
pub fn verify_sync(scr: &Scr, adapter: &dyn SystemAdapter, config: &MapConfig) -> Result<Vec<Mismatch>, AdapterError> {
    let system: BTreeMap<String, Entry> =
        visible_entries(adapter, config)?.into_iter().map(|e| (e.path.clone(), e)).collect();
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for c in scr.components().skip(1) {
        seen.insert(c.id.as_str());
        let kind = match system.get(&c.id) {
            None => Some(MismatchKind::MissingInSystem),
            Some(e) if e.kind != c.kind => Some(MismatchKind::KindConflict),
            Some(e) if e.kind == Kind::File && e.digest != c.digest => Some(MismatchKind::DigestDrift),
            Some(_) => None,
        };
        if let Some(kind) = kind {
            out.push(Mismatch { id: c.id.clone(), kind });
        }
    }
    for path in system.keys() {
        if !seen.contains(path.as_str()) {
            out.push(Mismatch { id: path.clone(), kind: MismatchKind::MissingInScr });
        }
    }
    out.sort_by(|a, b| (a.id.as_str(), a.kind).cmp(&(b.id.as_str(), b.kind)));
    Ok(out)
}

/// Applies every mutation of the set inside one transaction: non-deletes in
/// id order, then deletes in id order. Any failure rolls the whole batch back.
pub fn apply_mutations(adapter: &mut dyn SystemAdapter, actions: &ActionSet) -> Result<(), AdapterError> {
    let mut ordered: Vec<(&str, Mutation)> = Vec::new();
    let mut deletes = Vec::new();
    for action in actions {
        match &action.request {
            Request::Edit { content, .. } => ordered.push((&action.id, Mutation::Edit { content: content.clone() })),
            Request::Write { content } => ordered.push((&action.id, Mutation::Write { content: content.clone() })),
            Request::Delete => deletes.push((action.id.as_str(), Mutation::Delete)),
            Request::Provide { .. } | Request::Malformed(_) => {}
        }
    }
    ordered.extend(deletes);

    adapter.begin()?;
    for (path, mutation) in &ordered {
        if let Err(e) = adapter.apply(path, mutation) {
            adapter.rollback()?;
            return Err(e);
        }
    }
    if let Err(e) = adapter.commit() {
        // Adapters restore their own state on a failed commit; rollback only
        // clears any leftover transaction.
        let _ = adapter.rollback();
        return Err(e);
    }
    Ok(())
}
