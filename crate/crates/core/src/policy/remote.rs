//! Policy driven by an external agent over HTTP.
//!
//! Each turn POSTs `{"scr": <document>, "task": <text>, "last_outcome": <outcome|null>}`
//! as canonical JSON and expects back either `{"proposal": <document>}` or
//! `{"done": {"rationale": <text>}}`.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Decision, Policy, PolicyError};
use crate::engine::StepOutcome;
use crate::scr::{canonical_json, canonical_serialize, Scr};
use crate::validation::Proposal;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemoteRequest {
    pub scr: Scr,
    pub task: String,
    pub last_outcome: Option<StepOutcome>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemoteReply {
    Proposal(Box<Scr>),
    Done { rationale: String },
}

pub struct RemotePolicy {
    endpoint: String,
    retries: u32,
    agent: ureq::Agent,
}

impl RemotePolicy {
    pub fn new(endpoint: impl Into<String>) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(Duration::from_secs(120)).build();
        RemotePolicy { endpoint: endpoint.into(), retries: 2, agent }
    }

    /// Number of extra attempts after a transport failure.
    pub fn with_retries(mut self, retries: u32) -> Self {
        self.retries = retries;
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.agent = ureq::AgentBuilder::new().timeout(timeout).build();
        self
    }

    fn post(&self, body: &[u8]) -> Result<Vec<u8>, String> {
        let response = self
            .agent
            .post(&self.endpoint)
            .set("Content-Type", "application/json")
            .send_bytes(body)
            .map_err(|e| e.to_string())?;
        let mut out = Vec::new();
        std::io::Read::read_to_end(&mut response.into_reader(), &mut out).map_err(|e| e.to_string())?;
        Ok(out)
    }
}

/// Interprets a reply body. Anything that is not a well-formed reply becomes
/// an unparseable decision rather than an error.
pub fn interpret_reply(body: Vec<u8>) -> Decision {
    let unparseable = |raw: Vec<u8>, reason: String| Decision::Unparseable { raw, reason };
    let value: Value = match serde_json::from_slice(&body) {
        Ok(v) => v,
        Err(e) => return unparseable(body, format!("reply is not JSON: {e}")),
    };
    match serde_json::from_value::<RemoteReply>(value) {
        Ok(RemoteReply::Done { rationale }) => Decision::Done { rationale },
        Ok(RemoteReply::Proposal(scr)) => match scr.validate() {
            Ok(()) => Decision::Propose(Proposal::new(*scr)),
            Err(e) => {
                let raw = canonical_serialize(&scr);
                unparseable(raw, format!("proposal violates the document schema: {e}"))
            }
        },
        Err(e) => unparseable(body, format!("reply is neither a proposal nor done: {e}")),
    }
}

impl Policy for RemotePolicy {
    fn decide(&mut self, scr: &Scr, task: &str, last_outcome: Option<&StepOutcome>) -> Result<Decision, PolicyError> {
        let request = RemoteRequest { scr: scr.clone(), task: task.to_owned(), last_outcome: last_outcome.cloned() };
        let body = canonical_json(&request);
        let mut last_err = String::new();
        for _ in 0..=self.retries {
            match self.post(&body) {
                Ok(reply) => return Ok(interpret_reply(reply)),
                Err(e) => last_err = e,
            }
        }
        Err(PolicyError::Transport(last_err))
    }
}
