//! The state-context document: a versioned component tree that is at once
//! the agent's context map, the authoritative state record, and the action
//! interface (through per-component `request` fields).
//!
//! The canonical byte form is compact JSON with object keys in the fixed
//! schema order declared by the structs below. Optional fields are omitted
//! rather than emitted as `null`.

use std::collections::BTreeMap;
use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Value};

use crate::digest::Digest;

pub const PROTOCOL_VERSION: &str = "gatekeeper/1";

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum ScrError {
    #[error("malformed syntax: {0}")]
    Syntax(String),
    #[error("schema violation at {id:?}: {invariant}")]
    Schema { id: String, invariant: String },
}

impl ScrError {
    fn schema(id: &str, invariant: impl Into<String>) -> Self {
        ScrError::Schema { id: id.to_owned(), invariant: invariant.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    File,
    Directory,
}

/// Information level of a component. Ordered: latent < summary < full.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fidelity {
    Latent,
    Summary,
    Full,
}

impl Fidelity {
    pub fn as_str(self) -> &'static str {
        match self {
            Fidelity::Latent => "latent",
            Fidelity::Summary => "summary",
            Fidelity::Full => "full",
        }
    }
}

/// A declarative intent attached to one component.
///
/// `Malformed` holds a populated request field that is not exactly one of the
/// four known intents (zero or several keys, unknown key, bad payload). It
/// survives parsing so that validation can reject it with a proper code.
#[derive(Debug, Clone, PartialEq)]
pub enum Request {
    Provide { target_fidelity: Fidelity },
    Edit { expected_digest: Digest, content: String },
    Write { content: String },
    Delete,
    Malformed(Value),
}

impl Request {
    pub fn name(&self) -> &'static str {
        match self {
            Request::Provide { .. } => "provide",
            Request::Edit { .. } => "edit",
            Request::Write { .. } => "write",
            Request::Delete => "delete",
            Request::Malformed(_) => "malformed",
        }
    }

    pub fn is_mutation(&self) -> bool {
        matches!(self, Request::Edit { .. } | Request::Write { .. } | Request::Delete)
    }

    pub fn to_value(&self) -> Value {
        match self {
            Request::Provide { target_fidelity } => {
                json!({ "provide": { "target_fidelity": target_fidelity.as_str() } })
            }
            // Request payload keys are emitted in sorted order.
            Request::Edit { expected_digest, content } => json!({
                "edit": { "content": content, "expected_digest": expected_digest.as_str() }
            }),
            Request::Write { content } => json!({ "write": { "content": content } }),
            Request::Delete => json!({ "delete": {} }),
            Request::Malformed(v) => v.clone(),
        }
    }

    pub fn from_value(value: Value) -> Request {
        Self::classify(&value).unwrap_or(Request::Malformed(value))
    }

    fn classify(value: &Value) -> Option<Request> {
        let obj = value.as_object()?;
        if obj.len() != 1 {
            return None;
        }
        let (key, payload) = obj.iter().next()?;
        let payload = payload.as_object()?;
        let only = |keys: &[&str]| payload.len() == keys.len() && keys.iter().all(|k| payload.contains_key(*k));
        match key.as_str() {
            "provide" if only(&["target_fidelity"]) => match payload["target_fidelity"].as_str()? {
                "summary" => Some(Request::Provide { target_fidelity: Fidelity::Summary }),
                "full" => Some(Request::Provide { target_fidelity: Fidelity::Full }),
                _ => None,
            },
            "edit" if only(&["expected_digest", "content"]) => Some(Request::Edit {
                expected_digest: Digest::parse(payload["expected_digest"].as_str()?)?,
                content: payload["content"].as_str()?.to_owned(),
            }),
            "write" if only(&["content"]) => Some(Request::Write { content: payload["content"].as_str()?.to_owned() }),
            "delete" if payload.is_empty() => Some(Request::Delete),
            _ => None,
        }
    }
}

impl Serialize for Request {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_value().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Request {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = Value::deserialize(deserializer)?;
        if value.is_null() {
            return Err(D::Error::custom("request must not be null"));
        }
        Ok(Request::from_value(value))
    }
}

/// One node of the tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Component {
    pub id: String,
    pub kind: Kind,
    pub fidelity: Fidelity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest: Option<Digest>,
    pub size_bytes: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<Component>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request: Option<Request>,
}

impl Component {
    pub fn directory(id: impl Into<String>) -> Self {
        Component {
            id: id.into(),
            kind: Kind::Directory,
            fidelity: Fidelity::Latent,
            digest: None,
            size_bytes: 0,
            summary: None,
            content: None,
            children: Vec::new(),
            request: None,
        }
    }

    pub fn latent_file(id: impl Into<String>, digest: Digest, size_bytes: u64) -> Self {
        Component {
            id: id.into(),
            kind: Kind::File,
            fidelity: Fidelity::Latent,
            digest: Some(digest),
            size_bytes,
            summary: None,
            content: None,
            children: Vec::new(),
            request: None,
        }
    }

    pub fn is_dir(&self) -> bool {
        self.kind == Kind::Directory
    }

    /// Last path segment; empty for the root.
    pub fn name(&self) -> &str {
        self.id.rsplit('/').next().unwrap_or("")
    }

    /// Copy of this node with its children detached.
    pub fn shallow(&self) -> Component {
        Component { children: Vec::new(), ..self.clone() }
    }
}

/// Parent id of a canonical path (`None` for the root).
pub fn parent_id(id: &str) -> Option<&str> {
    if id.is_empty() {
        None
    } else {
        Some(id.rsplit_once('/').map_or("", |(p, _)| p))
    }
}

pub fn child_id(parent: &str, name: &str) -> String {
    if parent.is_empty() {
        name.to_owned()
    } else {
        format!("{parent}/{name}")
    }
}

/// The System State-Context Representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scr {
    pub protocol_version: String,
    pub revision: u64,
    pub task: String,
    pub root: Component,
}

#[allow(clippy::len_without_is_empty)]
impl Scr {
    pub fn empty(task: impl Into<String>) -> Self {
        Scr {
            protocol_version: PROTOCOL_VERSION.to_owned(),
            revision: 0,
            task: task.into(),
            root: Component::directory(""),
        }
    }

    /// Assembles a document from a flat set of detached nodes. Any node whose
    /// parent is absent is dropped; the root is synthesized if missing.
    pub fn from_flat(revision: u64, task: impl Into<String>, nodes: impl IntoIterator<Item = Component>) -> Self {
        let mut by_parent: BTreeMap<String, Vec<Component>> = BTreeMap::new();
        let mut root = Component::directory("");
        for node in nodes {
            match parent_id(&node.id) {
                None => root = Component { children: Vec::new(), ..node },
                Some(p) => by_parent.entry(p.to_owned()).or_default().push(Component { children: Vec::new(), ..node }),
            }
        }
        fn attach(node: &mut Component, by_parent: &mut BTreeMap<String, Vec<Component>>) {
            if let Some(mut kids) = by_parent.remove(&node.id) {
                kids.sort_by(|a, b| a.id.cmp(&b.id));
                for kid in kids.iter_mut() {
                    attach(kid, by_parent);
                }
                node.children = kids;
            }
        }
        attach(&mut root, &mut by_parent);
        Scr { protocol_version: PROTOCOL_VERSION.to_owned(), revision, task: task.into(), root }
    }

    /// Pre-order traversal of every component, root first.
    pub fn components(&self) -> Components<'_> {
        Components { stack: vec![&self.root] }
    }

    pub fn find(&self, id: &str) -> Option<&Component> {
        let mut node = &self.root;
        if id.is_empty() {
            return Some(node);
        }
        let mut prefix = String::new();
        for segment in id.split('/') {
            prefix = child_id(&prefix, segment);
            let idx = node.children.binary_search_by(|c| c.id.as_str().cmp(&prefix)).ok()?;
            node = &node.children[idx];
        }
        Some(node)
    }

    pub fn find_mut(&mut self, id: &str) -> Option<&mut Component> {
        let mut node = &mut self.root;
        if id.is_empty() {
            return Some(node);
        }
        let mut prefix = String::new();
        for segment in id.split('/') {
            prefix = child_id(&prefix, segment);
            let idx = node.children.binary_search_by(|c| c.id.as_str().cmp(&prefix)).ok()?;
            node = &mut node.children[idx];
        }
        Some(node)
    }

    /// Inserts a detached node under its parent, keeping children sorted.
    /// Returns false if the parent is missing or the id is taken.
    pub fn insert(&mut self, node: Component) -> bool {
        let Some(parent) = parent_id(&node.id) else { return false };
        let Some(parent) = self.find_mut(parent) else { return false };
        match parent.children.binary_search_by(|c| c.id.cmp(&node.id)) {
            Ok(_) => false,
            Err(pos) => {
                parent.children.insert(pos, node);
                true
            }
        }
    }

    pub fn clear_requests(&mut self) {
        fn walk(c: &mut Component) {
            c.request = None;
            c.children.iter_mut().for_each(walk);
        }
        walk(&mut self.root);
    }

    pub fn has_requests(&self) -> bool {
        self.components().any(|c| c.request.is_some())
    }

    /// Number of components, root included.
    pub fn len(&self) -> usize {
        self.components().count()
    }

    /// Checks every type invariant of the document.
    pub fn validate(&self) -> Result<(), ScrError> {
        if self.protocol_version != PROTOCOL_VERSION {
            return Err(ScrError::schema("", format!("protocol_version must be {PROTOCOL_VERSION:?}")));
        }
        if !self.root.id.is_empty() {
            return Err(ScrError::schema(&self.root.id, "root id must be empty"));
        }
        if self.root.kind != Kind::Directory {
            return Err(ScrError::schema("", "root must be a directory"));
        }
        validate_component(&self.root)
    }
}

fn validate_component(c: &Component) -> Result<(), ScrError> {
    let id = c.id.as_str();
    match c.kind {
        Kind::Directory => {
            if c.fidelity != Fidelity::Latent {
                return Err(ScrError::schema(id, "directories are always latent"));
            }
            if c.digest.is_some() || c.content.is_some() || c.summary.is_some() {
                return Err(ScrError::schema(id, "directories carry no digest, summary or content"));
            }
        }
        Kind::File => {
            if !c.children.is_empty() {
                return Err(ScrError::schema(id, "files carry no children"));
            }
            // A node proposed for creation has no system digest yet.
            let creating = matches!(c.request, Some(Request::Write { .. }));
            if c.digest.is_none() && !creating {
                return Err(ScrError::schema(id, "files carry a digest"));
            }
            match c.fidelity {
                Fidelity::Latent if c.summary.is_some() || c.content.is_some() => {
                    return Err(ScrError::schema(id, "latent components carry no summary or content"));
                }
                Fidelity::Summary if c.summary.is_none() || c.content.is_some() => {
                    return Err(ScrError::schema(id, "summary components carry a summary and no content"));
                }
                Fidelity::Full if c.summary.is_none() || c.content.is_none() => {
                    return Err(ScrError::schema(id, "full components carry summary and content"));
                }
                _ => {}
            }
            if let (Some(content), Some(digest)) = (&c.content, &c.digest) {
                if Digest::of_str(content) != *digest {
                    return Err(ScrError::schema(id, "digest does not match content"));
                }
            }
        }
    }
    let mut prev: Option<&str> = None;
    for child in &c.children {
        let name = child.name();
        if name.is_empty() || name == "." || name == ".." || child.id != child_id(id, name) {
            return Err(ScrError::schema(&child.id, format!("id is not a canonical path under {id:?}")));
        }
        if let Some(p) = prev {
            if p >= child.id.as_str() {
                return Err(ScrError::schema(id, "children must be sorted strictly ascending by id"));
            }
        }
        prev = Some(&child.id);
        validate_component(child)?;
    }
    Ok(())
}

pub struct Components<'a> {
    stack: Vec<&'a Component>,
}

impl<'a> Iterator for Components<'a> {
    type Item = &'a Component;

    fn next(&mut self) -> Option<Self::Item> {
        let node = self.stack.pop()?;
        self.stack.extend(node.children.iter().rev());
        Some(node)
    }
}

/// Parses and validates a document.
pub fn parse(bytes: &[u8]) -> Result<Scr, ScrError> {
    let text = std::str::from_utf8(bytes).map_err(|e| ScrError::Syntax(format!("not UTF-8: {e}")))?;
    let scr: Scr = serde_json::from_str(text).map_err(|e| match e.classify() {
        serde_json::error::Category::Data => ScrError::schema("", e.to_string()),
        _ => ScrError::Syntax(e.to_string()),
    })?;
    scr.validate()?;
    Ok(scr)
}

pub fn canonical_serialize(scr: &Scr) -> Vec<u8> {
    serde_json::to_vec(scr).expect("document serialization is infallible")
}

/// Canonical compact JSON for any serializable value. Structs keep their
/// declared field order; maps are emitted in sorted key order.
pub fn canonical_json<T: Serialize>(value: &T) -> Vec<u8> {
    serde_json::to_vec(value).expect("serialization of protocol types is infallible")
}

pub fn scr_digest(scr: &Scr) -> Digest {
    Digest::of_bytes(&canonical_serialize(scr))
}

pub fn find<'a>(scr: &'a Scr, id: &str) -> Option<&'a Component> {
    scr.find(id)
}

impl fmt::Display for Scr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&String::from_utf8_lossy(&canonical_serialize(self)))
    }
}
