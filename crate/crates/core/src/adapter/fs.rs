//! Real-filesystem adapter.
//!
//! Mutations are staged as files under a hidden directory inside the root
//! and renamed into place at commit. Overwritten or deleted originals are
//! moved aside first so that a failing commit can put everything back.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::UNIX_EPOCH;

use super::{AdapterError, Entry, Mutation, SystemAdapter};
use crate::digest::Digest;
use crate::scr::{child_id, parent_id, Kind};

/// Name of the staging directory; never listed.
pub const STAGING_DIR: &str = ".gatekeeper-txn";

#[derive(Debug)]
pub struct FsAdapter {
    root: PathBuf,
    txn: Option<Txn>,
}

#[derive(Debug, Default)]
struct Txn {
    staged: BTreeMap<String, Staged>,
    seq: usize,
}

#[derive(Debug)]
enum Staged {
    Put(PathBuf),
    Delete,
}

enum Undo {
    Restore { backup: PathBuf, target: PathBuf },
    RemoveFile(PathBuf),
    RemoveDir(PathBuf),
    MakeDir(PathBuf),
}

impl FsAdapter {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, AdapterError> {
        let root = root.into();
        let meta = fs::metadata(&root).map_err(|e| AdapterError::io(&root.display().to_string(), e))?;
        if !meta.is_dir() {
            return Err(AdapterError::io(&root.display().to_string(), "not a directory"));
        }
        Ok(FsAdapter { root, txn: None })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn abs(&self, path: &str) -> PathBuf {
        let mut p = self.root.clone();
        p.extend(path.split('/').filter(|s| !s.is_empty()));
        p
    }

    fn staging(&self) -> PathBuf {
        self.root.join(STAGING_DIR)
    }

    fn walk(&self, rel: &str, dir: &Path, out: &mut Vec<Entry>) -> Result<(), AdapterError> {
        let mut children: Vec<(String, fs::DirEntry)> = Vec::new();
        for item in fs::read_dir(dir).map_err(|e| AdapterError::io(rel, e))? {
            let item = item.map_err(|e| AdapterError::io(rel, e))?;
            // Names that are not valid UTF-8 cannot be canonical ids.
            let Ok(name) = item.file_name().into_string() else { continue };
            if rel.is_empty() && name == STAGING_DIR {
                continue;
            }
            children.push((name, item));
        }
        children.sort_by(|a, b| a.0.cmp(&b.0));
        for (name, item) in children {
            let path = child_id(rel, &name);
            let meta = fs::symlink_metadata(item.path()).map_err(|e| AdapterError::io(&path, e))?;
            let modified =
                meta.modified().ok().and_then(|t| t.duration_since(UNIX_EPOCH).ok()).map_or(0, |d| d.as_nanos() as u64);
            if meta.is_dir() {
                out.push(Entry { path: path.clone(), kind: Kind::Directory, size: 0, digest: None, modified: 0 });
                self.walk(&path, &item.path(), out)?;
            } else if meta.is_file() {
                let bytes = fs::read(item.path()).map_err(|e| AdapterError::io(&path, e))?;
                out.push(Entry {
                    path,
                    kind: Kind::File,
                    size: bytes.len() as u64,
                    digest: Some(Digest::of_bytes(&bytes)),
                    modified,
                });
            }
        }
        Ok(())
    }

    /// Kind of `path` as seen through the staged changes.
    fn view_kind(&self, txn: &Txn, path: &str) -> Option<Kind> {
        match txn.staged.get(path) {
            Some(Staged::Put(_)) => return Some(Kind::File),
            Some(Staged::Delete) => return None,
            None => {}
        }
        let prefix = format!("{path}/");
        if txn.staged.iter().any(|(k, s)| matches!(s, Staged::Put(_)) && k.starts_with(&prefix)) {
            return Some(Kind::Directory);
        }
        match fs::symlink_metadata(self.abs(path)) {
            Ok(m) if m.is_dir() => Some(Kind::Directory),
            Ok(m) if m.is_file() => Some(Kind::File),
            _ => None,
        }
    }

    fn view_has_children(&self, txn: &Txn, path: &str) -> Result<bool, AdapterError> {
        let prefix = format!("{path}/");
        if txn.staged.iter().any(|(k, s)| matches!(s, Staged::Put(_)) && k.starts_with(&prefix)) {
            return Ok(true);
        }
        let dir = self.abs(path);
        for item in fs::read_dir(&dir).map_err(|e| AdapterError::io(path, e))? {
            let item = item.map_err(|e| AdapterError::io(path, e))?;
            let name = item.file_name().to_string_lossy().into_owned();
            if path.is_empty() && name == STAGING_DIR {
                continue;
            }
            if !matches!(txn.staged.get(&child_id(path, &name)), Some(Staged::Delete)) {
                return Ok(true);
            }
        }
        Ok(false)
    }

    fn view_bytes(&self, txn: &Txn, path: &str) -> Result<Vec<u8>, AdapterError> {
        match txn.staged.get(path) {
            Some(Staged::Put(tmp)) => fs::read(tmp).map_err(|e| AdapterError::io(path, e)),
            Some(Staged::Delete) => Err(AdapterError::UnknownComponent(path.to_owned())),
            None => fs::read(self.abs(path)).map_err(|e| AdapterError::io(path, e)),
        }
    }

    fn stage_put(&self, txn: &mut Txn, path: &str, content: &str) -> Result<(), AdapterError> {
        let tmp = self.staging().join(format!("stage-{}", txn.seq));
        txn.seq += 1;
        fs::write(&tmp, content).map_err(|e| AdapterError::io(path, e))?;
        if let Some(Staged::Put(old)) = txn.staged.insert(path.to_owned(), Staged::Put(tmp)) {
            let _ = fs::remove_file(old);
        }
        Ok(())
    }

    fn run_commit(&self, txn: &Txn, undo: &mut Vec<Undo>) -> Result<(), AdapterError> {
        let backup_dir = self.staging().join("backup");
        fs::create_dir_all(&backup_dir).map_err(|e| AdapterError::io(STAGING_DIR, e))?;
        let mut backups = 0usize;
        let puts = txn.staged.iter().filter(|(_, s)| matches!(s, Staged::Put(_)));
        // Children before parents.
        let deletes = txn.staged.iter().rev().filter(|(_, s)| matches!(s, Staged::Delete));
        for (path, staged) in puts.chain(deletes) {
            let target = self.abs(path);
            let existing = fs::symlink_metadata(&target).ok();
            match staged {
                Staged::Put(tmp) => {
                    if existing.is_some() {
                        let backup = backup_dir.join(backups.to_string());
                        backups += 1;
                        fs::rename(&target, &backup).map_err(|e| AdapterError::io(path, e))?;
                        undo.push(Undo::Restore { backup, target: target.clone() });
                    } else {
                        let mut missing = Vec::new();
                        let mut cursor = parent_id(path);
                        while let Some(p) = cursor {
                            if p.is_empty() || self.abs(p).is_dir() {
                                break;
                            }
                            missing.push(p);
                            cursor = parent_id(p);
                        }
                        for dir in missing.into_iter().rev() {
                            fs::create_dir(self.abs(dir)).map_err(|e| AdapterError::io(dir, e))?;
                            undo.push(Undo::RemoveDir(self.abs(dir)));
                        }
                    }
                    fs::rename(tmp, &target).map_err(|e| AdapterError::io(path, e))?;
                    undo.push(Undo::RemoveFile(target));
                }
                Staged::Delete => match existing {
                    Some(m) if m.is_dir() => {
                        fs::remove_dir(&target).map_err(|e| AdapterError::io(path, e))?;
                        undo.push(Undo::MakeDir(target));
                    }
                    Some(_) => {
                        let backup = backup_dir.join(backups.to_string());
                        backups += 1;
                        fs::rename(&target, &backup).map_err(|e| AdapterError::io(path, e))?;
                        undo.push(Undo::Restore { backup, target });
                    }
                    None => return Err(AdapterError::UnknownComponent(path.clone())),
                },
            }
        }
        Ok(())
    }
}

impl SystemAdapter for FsAdapter {
    fn list_tree(&self) -> Result<Vec<Entry>, AdapterError> {
        let mut out = Vec::new();
        self.walk("", &self.root, &mut out)?;
        out.sort_by(|a, b| a.path.cmp(&b.path));
        Ok(out)
    }

    fn read_bytes(&self, path: &str) -> Result<Vec<u8>, AdapterError> {
        if path.is_empty() || path.split('/').next() == Some(STAGING_DIR) {
            return Err(AdapterError::UnknownComponent(path.to_owned()));
        }
        let target = self.abs(path);
        match fs::symlink_metadata(&target) {
            Ok(m) if m.is_file() => fs::read(&target).map_err(|e| AdapterError::io(path, e)),
            Ok(_) => Err(AdapterError::UnknownComponent(path.to_owned())),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(AdapterError::UnknownComponent(path.to_owned())),
            Err(e) => Err(AdapterError::io(path, e)),
        }
    }

    fn begin(&mut self) -> Result<(), AdapterError> {
        if self.txn.is_some() {
            return Err(AdapterError::TransactionActive);
        }
        let staging = self.staging();
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(|e| AdapterError::io(STAGING_DIR, e))?;
        }
        fs::create_dir(&staging).map_err(|e| AdapterError::io(STAGING_DIR, e))?;
        self.txn = Some(Txn::default());
        Ok(())
    }

    fn apply(&mut self, path: &str, mutation: &Mutation) -> Result<(), AdapterError> {
        let mut txn = self.txn.take().ok_or(AdapterError::NoTransaction)?;
        let result = (|| {
            if path.is_empty() || path.split('/').next() == Some(STAGING_DIR) {
                return Err(AdapterError::Conflict { path: path.to_owned(), message: "reserved path".into() });
            }
            match mutation {
                Mutation::Edit { content } => {
                    if self.view_kind(&txn, path) != Some(Kind::File) {
                        return Err(AdapterError::UnknownComponent(path.to_owned()));
                    }
                    if String::from_utf8(self.view_bytes(&txn, path)?).is_err() {
                        return Err(AdapterError::Unsupported(path.to_owned()));
                    }
                    self.stage_put(&mut txn, path, content)
                }
                Mutation::Write { content } => {
                    if self.view_kind(&txn, path).is_some() {
                        return Err(AdapterError::Conflict { path: path.to_owned(), message: "already exists".into() });
                    }
                    let mut cursor = parent_id(path);
                    while let Some(p) = cursor {
                        if !p.is_empty() && self.view_kind(&txn, p) == Some(Kind::File) {
                            return Err(AdapterError::Conflict {
                                path: path.to_owned(),
                                message: format!("{p:?} is a file"),
                            });
                        }
                        cursor = parent_id(p);
                    }
                    self.stage_put(&mut txn, path, content)
                }
                Mutation::Delete => match self.view_kind(&txn, path) {
                    None => Err(AdapterError::UnknownComponent(path.to_owned())),
                    Some(Kind::Directory) if self.view_has_children(&txn, path)? => {
                        Err(AdapterError::Conflict { path: path.to_owned(), message: "directory not empty".into() })
                    }
                    Some(_) => {
                        let on_disk = fs::symlink_metadata(self.abs(path)).is_ok();
                        if let Some(Staged::Put(tmp)) = txn.staged.remove(path) {
                            let _ = fs::remove_file(tmp);
                        }
                        if on_disk {
                            txn.staged.insert(path.to_owned(), Staged::Delete);
                        }
                        Ok(())
                    }
                },
            }
        })();
        self.txn = Some(txn);
        result
    }

    fn commit(&mut self) -> Result<(), AdapterError> {
        let txn = self.txn.take().ok_or(AdapterError::NoTransaction)?;
        let mut undo = Vec::new();
        let result = self.run_commit(&txn, &mut undo);
        if result.is_err() {
            for step in undo.into_iter().rev() {
                let _ = match step {
                    Undo::Restore { backup, target } => fs::rename(backup, target),
                    Undo::RemoveFile(p) => fs::remove_file(p),
                    Undo::RemoveDir(p) => fs::remove_dir(p),
                    Undo::MakeDir(p) => fs::create_dir(p),
                };
            }
        }
        let _ = fs::remove_dir_all(self.staging());
        result
    }

    fn rollback(&mut self) -> Result<(), AdapterError> {
        self.txn = None;
        let staging = self.staging();
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(|e| AdapterError::io(STAGING_DIR, e))?;
        }
        Ok(())
    }
}
