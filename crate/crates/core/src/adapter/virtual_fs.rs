use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdapterError, Entry, Mutation, SystemAdapter};
use crate::digest::Digest;
use crate::scr::{canonical_json, parent_id, Kind};

#[derive(Debug, Clone, PartialEq, Eq)]
enum Node {
    Dir,
    File { bytes: Vec<u8>, modified: u64 },
}

/// Where a [`VirtualAdapter`] should fail, for exercising rollback.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Fault {
    /// The n-th `apply` (0-based) inside a transaction fails.
    NthApply(usize),
    /// Any `apply` on this path fails.
    Path(String),
    /// `commit` fails after all applies succeeded.
    Commit,
}

/// In-memory system for hermetic tests and reproducible evaluation runs.
#[derive(Debug, Clone, Default)]
pub struct VirtualAdapter {
    nodes: BTreeMap<String, Node>,
    clock: u64,
    txn: Option<Txn>,
    fault: Option<Fault>,
}

#[derive(Debug, Clone)]
struct Txn {
    nodes: BTreeMap<String, Node>,
    clock: u64,
    applied: usize,
}

impl VirtualAdapter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn inject_fault(&mut self, fault: Option<Fault>) {
        self.fault = fault;
    }

    fn tick(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    /// Out-of-band write: creates or replaces a file, creating parents.
    pub fn put(&mut self, path: &str, content: &str) {
        self.put_bytes(path, content.as_bytes().to_vec());
    }

    pub fn put_bytes(&mut self, path: &str, bytes: Vec<u8>) {
        let modified = self.tick();
        self.put_with_time(path, bytes, modified);
    }

    fn put_with_time(&mut self, path: &str, bytes: Vec<u8>, modified: u64) {
        Self::ensure_parents(&mut self.nodes, path);
        self.nodes.insert(path.to_owned(), Node::File { bytes, modified });
    }

    pub fn mkdir(&mut self, path: &str) {
        Self::ensure_parents(&mut self.nodes, path);
        self.nodes.insert(path.to_owned(), Node::Dir);
    }

    /// Out-of-band removal of a path and everything below it.
    pub fn remove(&mut self, path: &str) {
        let prefix = format!("{path}/");
        self.nodes.retain(|k, _| k != path && !k.starts_with(&prefix));
    }

    fn ensure_parents(nodes: &mut BTreeMap<String, Node>, path: &str) {
        let mut cursor = parent_id(path);
        while let Some(p) = cursor {
            if p.is_empty() {
                break;
            }
            nodes.entry(p.to_owned()).or_insert(Node::Dir);
            cursor = parent_id(p);
        }
    }

    fn has_children(nodes: &BTreeMap<String, Node>, path: &str) -> bool {
        let prefix = format!("{path}/");
        nodes.range(prefix.clone()..).next().is_some_and(|(k, _)| k.starts_with(&prefix))
    }

    pub fn from_manifest(manifest: &Manifest) -> Self {
        let mut v = VirtualAdapter::new();
        for d in &manifest.dirs {
            v.mkdir(d);
        }
        for f in &manifest.files {
            match f.modified {
                Some(t) => {
                    v.clock = v.clock.max(t);
                    v.put_with_time(&f.path, f.content.as_bytes().to_vec(), t);
                }
                None => v.put(&f.path, &f.content),
            }
        }
        v
    }

    /// Snapshot of the current tree. Non-UTF-8 files are rendered lossily.
    pub fn to_manifest(&self) -> Manifest {
        let mut files = Vec::new();
        let mut dirs = Vec::new();
        for (path, node) in &self.nodes {
            match node {
                Node::Dir if !Self::has_children(&self.nodes, path) => dirs.push(path.clone()),
                Node::Dir => {}
                Node::File { bytes, modified } => files.push(ManifestFile {
                    path: path.clone(),
                    content: String::from_utf8_lossy(bytes).into_owned(),
                    modified: Some(*modified),
                }),
            }
        }
        Manifest { files, dirs }
    }

    /// Copies a real directory tree into memory. Modification order follows
    /// the real mtimes.
    pub fn from_dir(root: &Path) -> Result<Self, AdapterError> {
        let fs = super::FsAdapter::open(root)?;
        let mut v = VirtualAdapter::new();
        let mut entries = fs.list_tree()?;
        entries.sort_by(|a, b| (a.modified, &a.path).cmp(&(b.modified, &b.path)));
        for e in entries {
            match e.kind {
                Kind::Directory => v.mkdir(&e.path),
                Kind::File => {
                    let bytes = fs.read_bytes(&e.path)?;
                    v.put_bytes(&e.path, bytes);
                }
            }
        }
        Ok(v)
    }

    fn check_fault(&self, path: &str, applied: usize) -> Result<(), AdapterError> {
        match &self.fault {
            Some(Fault::NthApply(n)) if *n == applied => Err(AdapterError::Injected(path.to_owned())),
            Some(Fault::Path(p)) if p == path => Err(AdapterError::Injected(path.to_owned())),
            _ => Ok(()),
        }
    }
}

impl SystemAdapter for VirtualAdapter {
    fn list_tree(&self) -> Result<Vec<Entry>, AdapterError> {
        Ok(self
            .nodes
            .iter()
            .map(|(path, node)| match node {
                Node::Dir => Entry { path: path.clone(), kind: Kind::Directory, size: 0, digest: None, modified: 0 },
                Node::File { bytes, modified } => Entry {
                    path: path.clone(),
                    kind: Kind::File,
                    size: bytes.len() as u64,
                    digest: Some(Digest::of_bytes(bytes)),
                    modified: *modified,
                },
            })
            .collect())
    }

    fn read_bytes(&self, path: &str) -> Result<Vec<u8>, AdapterError> {
        match self.nodes.get(path) {
            Some(Node::File { bytes, .. }) => Ok(bytes.clone()),
            _ => Err(AdapterError::UnknownComponent(path.to_owned())),
        }
    }

    fn begin(&mut self) -> Result<(), AdapterError> {
        if self.txn.is_some() {
            return Err(AdapterError::TransactionActive);
        }
        self.txn = Some(Txn { nodes: self.nodes.clone(), clock: self.clock, applied: 0 });
        Ok(())
    }

    fn apply(&mut self, path: &str, mutation: &Mutation) -> Result<(), AdapterError> {
        let applied = self.txn.as_ref().ok_or(AdapterError::NoTransaction)?.applied;
        self.check_fault(path, applied)?;
        let modified = self.clock + 1;
        let txn = self.txn.as_mut().ok_or(AdapterError::NoTransaction)?;
        let nodes = &mut txn.nodes;
        match mutation {
            Mutation::Edit { content } => match nodes.get(path) {
                Some(Node::File { bytes, .. }) => {
                    if std::str::from_utf8(bytes).is_err() {
                        return Err(AdapterError::Unsupported(path.to_owned()));
                    }
                    nodes.insert(path.to_owned(), Node::File { bytes: content.as_bytes().to_vec(), modified });
                }
                _ => return Err(AdapterError::UnknownComponent(path.to_owned())),
            },
            Mutation::Write { content } => {
                if nodes.contains_key(path) {
                    return Err(AdapterError::Conflict { path: path.to_owned(), message: "already exists".into() });
                }
                let mut cursor = parent_id(path);
                while let Some(p) = cursor {
                    if matches!(nodes.get(p), Some(Node::File { .. })) {
                        return Err(AdapterError::Conflict {
                            path: path.to_owned(),
                            message: format!("{p:?} is a file"),
                        });
                    }
                    cursor = parent_id(p);
                }
                Self::ensure_parents(nodes, path);
                nodes.insert(path.to_owned(), Node::File { bytes: content.as_bytes().to_vec(), modified });
            }
            Mutation::Delete => match nodes.get(path) {
                None => return Err(AdapterError::UnknownComponent(path.to_owned())),
                Some(Node::Dir) if Self::has_children(nodes, path) => {
                    return Err(AdapterError::Conflict { path: path.to_owned(), message: "directory not empty".into() })
                }
                Some(_) => {
                    nodes.remove(path);
                }
            },
        }
        txn.applied += 1;
        txn.clock = modified;
        self.clock = modified;
        Ok(())
    }

    fn commit(&mut self) -> Result<(), AdapterError> {
        if self.txn.is_none() {
            return Err(AdapterError::NoTransaction);
        }
        if self.fault == Some(Fault::Commit) {
            return Err(AdapterError::Injected("<commit>".into()));
        }
        let txn = self.txn.take().expect("checked above");
        self.nodes = txn.nodes;
        self.clock = txn.clock;
        Ok(())
    }

    fn rollback(&mut self) -> Result<(), AdapterError> {
        // The staged tree is simply discarded; only the clock may have moved.
        if let Some(txn) = self.txn.take() {
            self.clock = self.clock.max(txn.clock);
        }
        Ok(())
    }
}

/// Fixture format for virtual trees.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub files: Vec<ManifestFile>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dirs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFile {
    pub path: String,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modified: Option<u64>,
}

impl Manifest {
    pub fn parse(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(bytes)
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        canonical_json(self)
    }
}
