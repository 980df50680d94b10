use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{Decision, Policy, PolicyError};
use crate::digest::Digest;
use crate::engine::StepOutcome;
use crate::scr::{Fidelity, Request, Scr};
use crate::validation::Proposal;

/// A request whose digest may be resolved against the state at emit time.
///
/// For `edit`, the expected digest is, in order of precedence: the literal
/// `expected_digest`, the digest of `believed_content`, or the component's
/// current digest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum RequestTemplate {
    Provide {
        target_fidelity: Fidelity,
    },
    Edit {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        expected_digest: Option<Digest>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        believed_content: Option<String>,
        content: String,
    },
    Write {
        content: String,
    },
    Delete {},
}

impl RequestTemplate {
    pub fn resolve(&self, id: &str, scr: &Scr) -> Request {
        match self {
            RequestTemplate::Provide { target_fidelity } => Request::Provide { target_fidelity: *target_fidelity },
            RequestTemplate::Edit { expected_digest, believed_content, content } => {
                let expected_digest = match (expected_digest, believed_content) {
                    (Some(d), _) => d.clone(),
                    (None, Some(text)) => Digest::of_str(text),
                    (None, None) => scr.find(id).and_then(|c| c.digest.clone()).unwrap_or_else(|| Digest::of_str("")),
                };
                Request::Edit { expected_digest, content: content.clone() }
            }
            RequestTemplate::Write { content } => Request::Write { content: content.clone() },
            RequestTemplate::Delete {} => Request::Delete,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionTemplate {
    pub id: String,
    pub request: RequestTemplate,
}

/// One scripted proposal. `revision` defaults to the current revision.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposalTemplate {
    pub requests: Vec<ActionTemplate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revision: Option<u64>,
}

impl ProposalTemplate {
    pub fn single(id: &str, request: RequestTemplate) -> Self {
        ProposalTemplate { requests: vec![ActionTemplate { id: id.to_owned(), request }], revision: None }
    }

    pub fn instantiate(&self, scr: &Scr) -> Proposal {
        let requests = self.requests.iter().map(|a| (a.id.clone(), a.request.resolve(&a.id, scr)));
        Proposal::with_requests(scr, self.revision.unwrap_or(scr.revision), requests)
    }
}

/// Plan file format: `{"steps": [ProposalTemplate, ...]}`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanFile {
    pub steps: Vec<ProposalTemplate>,
}

impl PlanFile {
    pub fn parse(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(bytes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlanStep {
    Mutate(ProposalTemplate),
    Done,
}

/// Decides the mutations once the context phase is over.
pub trait Planner {
    fn next(&mut self, scr: &Scr, task: &str) -> Result<PlanStep, PolicyError>;
}

impl<P: Planner + ?Sized> Planner for Box<P> {
    fn next(&mut self, scr: &Scr, task: &str) -> Result<PlanStep, PolicyError> {
        (**self).next(scr, task)
    }
}

/// Replays a fixed list of mutation steps, then reports completion.
#[derive(Debug, Clone)]
pub struct ScriptedPlanner {
    steps: VecDeque<ProposalTemplate>,
}

impl ScriptedPlanner {
    pub fn new(steps: impl IntoIterator<Item = ProposalTemplate>) -> Self {
        ScriptedPlanner { steps: steps.into_iter().collect() }
    }
}

impl Planner for ScriptedPlanner {
    fn next(&mut self, _scr: &Scr, _task: &str) -> Result<PlanStep, PolicyError> {
        Ok(self.steps.pop_front().map_or(PlanStep::Done, PlanStep::Mutate))
    }
}

/// Emits a fixed script of proposals, then `done`. Proposals are not
/// pre-validated.
#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    script: VecDeque<ProposalTemplate>,
    finished: bool,
}

impl ScriptedPolicy {
    pub fn new(script: Vec<ProposalTemplate>) -> Result<Self, PolicyError> {
        if script.is_empty() {
            return Err(PolicyError::EmptyScript);
        }
        Ok(ScriptedPolicy { script: script.into(), finished: false })
    }
}

impl Policy for ScriptedPolicy {
    fn decide(&mut self, scr: &Scr, _task: &str, _last: Option<&StepOutcome>) -> Result<Decision, PolicyError> {
        if let Some(t) = self.script.pop_front() {
            return Ok(Decision::Propose(t.instantiate(scr)));
        }
        if self.finished {
            return Err(PolicyError::ScriptExhausted);
        }
        self.finished = true;
        Ok(Decision::Done { rationale: "script complete".into() })
    }
}
