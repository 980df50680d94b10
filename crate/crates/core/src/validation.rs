//! Proposals, declarative action sets, and the validity check that guards
//! every transition.
//!
//! A proposal is a full document returned by the policy. Its populated
//! `request` fields are the action set; every other field must match the
//! current state exactly. Validation is all-or-nothing: a single bad request
//! invalidates the whole proposal.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::digest::Digest;
use crate::scr::{self, parent_id, Component, Fidelity, Kind, Request, Scr, ScrError};

/// An agent-produced document whose request fields encode the action.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub scr: Scr,
}

impl Proposal {
    pub fn new(scr: Scr) -> Self {
        Proposal { scr }
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, ScrError> {
        scr::parse(bytes).map(Proposal::new)
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        scr::canonical_serialize(&self.scr)
    }

    /// A proposal that carries no request: "no action".
    pub fn noop(current: &Scr) -> Self {
        let mut scr = current.clone();
        scr.clear_requests();
        Proposal { scr }
    }

    /// Builds a proposal from `current` with the given requests attached.
    ///
    /// Requests on ids absent from `current` are attached to synthesized file
    /// nodes (with any missing ancestor directories synthesized as well). No
    /// validity check is made here; the engine decides.
    pub fn with_requests(current: &Scr, revision: u64, requests: impl IntoIterator<Item = (String, Request)>) -> Self {
        let mut scr = current.clone();
        scr.clear_requests();
        scr.revision = revision;
        for (id, request) in requests {
            if let Some(node) = scr.find_mut(&id) {
                node.request = Some(request);
                continue;
            }
            if id.is_empty() {
                continue;
            }
            let mut ancestors = Vec::new();
            let mut cursor = parent_id(&id);
            while let Some(p) = cursor {
                if scr.find(p).is_some() {
                    break;
                }
                ancestors.push(p.to_owned());
                cursor = parent_id(p);
            }
            for dir in ancestors.into_iter().rev() {
                scr.insert(Component::directory(dir));
            }
            let mut node = Component::latent_file(id, Digest::of_str(""), 0);
            if matches!(request, Request::Write { .. }) {
                node.digest = None;
            }
            node.request = Some(request);
            // Fails only when the parent is a file; such a request is dropped.
            scr.insert(node);
        }
        Proposal { scr }
    }
}

/// One declarative intent bound to a component id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub id: String,
    pub request: Request,
}

/// The actions of one proposal, sorted ascending by id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionSet(Vec<Action>);

impl ActionSet {
    pub fn empty() -> Self {
        ActionSet(Vec::new())
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, Request)>) -> Self {
        let map: BTreeMap<String, Request> = pairs.into_iter().collect();
        ActionSet(map.into_iter().map(|(id, request)| Action { id, request }).collect())
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Action> {
        self.0.iter()
    }

    pub fn get(&self, id: &str) -> Option<&Request> {
        self.0.binary_search_by(|a| a.id.as_str().cmp(id)).ok().map(|i| &self.0[i].request)
    }

    pub fn has_mutations(&self) -> bool {
        self.0.iter().any(|a| a.request.is_mutation())
    }
}

impl<'a> IntoIterator for &'a ActionSet {
    type Item = &'a Action;
    type IntoIter = std::slice::Iter<'a, Action>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ActionError {
    #[error("malformed request at {id:?}")]
    MalformedRequest { id: String },
}

/// Collects every populated request, including those on new nodes.
pub fn extract_actions(proposal: &Proposal) -> Result<ActionSet, ActionError> {
    let mut pairs = Vec::new();
    for c in proposal.scr.components() {
        match &c.request {
            None => {}
            Some(Request::Malformed(_)) => return Err(ActionError::MalformedRequest { id: c.id.clone() }),
            Some(r) => pairs.push((c.id.clone(), r.clone())),
        }
    }
    Ok(ActionSet::from_pairs(pairs))
}

/// Stable wire vocabulary for rejections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationCode {
    StaleRevision,
    UnknownComponent,
    ParentMissing,
    DigestMismatch,
    FidelityRegression,
    AlreadyFull,
    DeleteNonemptyDir,
    WriteExists,
    MalformedRequest,
    ContentTampering,
    // Raised by the system adapter while executing an otherwise valid batch.
    TooLarge,
    UnsupportedContent,
    IoFailure,
}

impl ViolationCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationCode::StaleRevision => "stale-revision",
            ViolationCode::UnknownComponent => "unknown-component",
            ViolationCode::ParentMissing => "parent-missing",
            ViolationCode::DigestMismatch => "digest-mismatch",
            ViolationCode::FidelityRegression => "fidelity-regression",
            ViolationCode::AlreadyFull => "already-full",
            ViolationCode::DeleteNonemptyDir => "delete-nonempty-dir",
            ViolationCode::WriteExists => "write-exists",
            ViolationCode::MalformedRequest => "malformed-request",
            ViolationCode::ContentTampering => "content-tampering",
            ViolationCode::TooLarge => "too-large",
            ViolationCode::UnsupportedContent => "unsupported-content",
            ViolationCode::IoFailure => "io-failure",
        }
    }

    /// Codes that reveal an action premised on a false belief about state.
    pub fn is_grounding_error(self) -> bool {
        matches!(self, ViolationCode::DigestMismatch | ViolationCode::UnknownComponent)
    }
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub id: String,
    pub code: ViolationCode,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub valid: bool,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn ok() -> Self {
        ValidationReport { valid: true, violations: Vec::new() }
    }

    pub fn from_violations(mut violations: Vec<Violation>) -> Self {
        violations.sort_by(|a, b| (a.id.as_str(), a.code).cmp(&(b.id.as_str(), b.code)));
        violations.dedup();
        ValidationReport { valid: violations.is_empty(), violations }
    }

    pub fn rejection(id: impl Into<String>, code: ViolationCode, message: impl Into<String>) -> Self {
        Self::from_violations(vec![Violation { id: id.into(), code, message: message.into() }])
    }

    pub fn codes(&self) -> impl Iterator<Item = ViolationCode> + '_ {
        self.violations.iter().map(|v| v.code)
    }

    pub fn has_grounding_error(&self) -> bool {
        self.codes().any(ViolationCode::is_grounding_error)
    }
}

/// Decides whether `proposal` may be executed against `current`.
pub fn is_valid(current: &Scr, proposal: &Proposal) -> ValidationReport {
    let prop = &proposal.scr;
    let mut out = Vec::new();
    let mut push = |id: &str, code: ViolationCode, message: String| {
        out.push(Violation { id: id.to_owned(), code, message });
    };

    if prop.revision != current.revision {
        push(
            "",
            ViolationCode::StaleRevision,
            format!("proposal revision {} does not match current revision {}", prop.revision, current.revision),
        );
    }
    if prop.protocol_version != current.protocol_version || prop.task != current.task {
        push("", ViolationCode::ContentTampering, "document header differs from current state".into());
    }

    for node in prop.components() {
        let Some(request) = &node.request else { continue };
        let id = node.id.as_str();
        let existing = current.find(id);
        match request {
            Request::Malformed(v) => {
                push(id, ViolationCode::MalformedRequest, format!("request is not a single known intent: {v}"));
            }
            Request::Provide { target_fidelity } => match existing {
                Some(c) if c.kind == Kind::File => {
                    if c.fidelity == Fidelity::Full {
                        push(id, ViolationCode::AlreadyFull, "component is already at full fidelity".into());
                    } else if *target_fidelity <= c.fidelity {
                        push(
                            id,
                            ViolationCode::FidelityRegression,
                            format!("cannot provide {} over {}", target_fidelity.as_str(), c.fidelity.as_str()),
                        );
                    }
                }
                Some(_) => push(id, ViolationCode::UnknownComponent, "directories cannot be provided".into()),
                None => push(id, ViolationCode::UnknownComponent, "no such component".into()),
            },
            Request::Edit { expected_digest, .. } => match existing {
                Some(c) if c.kind == Kind::File => {
                    if c.digest.as_ref() != Some(expected_digest) {
                        push(
                            id,
                            ViolationCode::DigestMismatch,
                            format!(
                                "expected digest {expected_digest} but current is {}",
                                c.digest.as_ref().map_or("none", Digest::as_str)
                            ),
                        );
                    }
                }
                Some(_) => push(id, ViolationCode::UnknownComponent, "edit target is a directory".into()),
                None => push(id, ViolationCode::UnknownComponent, "no such component".into()),
            },
            Request::Write { .. } => {
                if existing.is_some() {
                    push(id, ViolationCode::WriteExists, "write target already exists; use edit".into());
                } else if node.kind != Kind::File
                    || node.fidelity != Fidelity::Latent
                    || node.summary.is_some()
                    || node.content.is_some()
                {
                    push(id, ViolationCode::MalformedRequest, "new nodes must be latent files".into());
                } else {
                    let parent = parent_id(id).unwrap_or("");
                    if !current.find(parent).is_some_and(Component::is_dir) {
                        push(id, ViolationCode::ParentMissing, format!("parent directory {parent:?} does not exist"));
                    }
                }
            }
            Request::Delete => match existing {
                Some(_) if id.is_empty() => {
                    push(id, ViolationCode::MalformedRequest, "the root cannot be deleted".into());
                }
                Some(c) if c.is_dir() && !c.children.is_empty() => {
                    push(id, ViolationCode::DeleteNonemptyDir, "directory is not empty".into());
                }
                Some(_) => {}
                None => push(id, ViolationCode::UnknownComponent, "no such component".into()),
            },
        }
    }

    tamper_check(current, prop, &mut out);
    ValidationReport::from_violations(out)
}

/// Every non-request field must be unchanged. Nodes absent from `current`
/// are tolerated only when they carry a request (already judged above) or
/// are bare directories enclosing one, which `parent-missing` covers.
fn tamper_check(current: &Scr, prop: &Scr, out: &mut Vec<Violation>) {
    let mut enclosing = std::collections::BTreeSet::new();
    for node in prop.components().filter(|c| c.request.is_some()) {
        let mut cursor = parent_id(&node.id);
        while let Some(p) = cursor {
            enclosing.insert(p);
            cursor = parent_id(p);
        }
    }
    let mut tamper = |id: &str, what: &str| {
        out.push(Violation { id: id.to_owned(), code: ViolationCode::ContentTampering, message: what.to_owned() });
    };
    for node in prop.components() {
        match current.find(&node.id) {
            Some(cur) => {
                if !same_fields(cur, node) {
                    tamper(&node.id, "non-request fields differ from current state");
                }
            }
            None if node.request.is_some() => {}
            None if enclosing.contains(node.id.as_str())
                && same_fields(&Component::directory(node.id.clone()), node) => {}
            None => tamper(&node.id, "component does not exist in current state"),
        }
    }
    for cur in current.components() {
        if prop.find(&cur.id).is_none() {
            tamper(&cur.id, "component removed without a delete request");
        }
    }
}

fn same_fields(a: &Component, b: &Component) -> bool {
    a.id == b.id
        && a.kind == b.kind
        && a.fidelity == b.fidelity
        && a.digest == b.digest
        && a.size_bytes == b.size_bytes
        && a.summary == b.summary
        && a.content == b.content
}
