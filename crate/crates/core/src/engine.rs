//! The transition function: validate a proposal, execute it against the
//! system adapter, and re-read ground truth into the next document.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::adapter::{
    apply_mutations, provide_content, visible_entries, AdapterError, ExtractiveSummarizer, MapConfig, Provided,
    Summarizer, SystemAdapter,
};
use crate::scr::{canonical_serialize, Component, Fidelity, Kind, Request, Scr};
use crate::tokens::{BytesOverFour, TokenCounter};
use crate::validation::{extract_actions, is_valid, ActionSet, Proposal, ValidationReport, ViolationCode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub accepted: bool,
    pub report: ValidationReport,
    pub applied_actions: ActionSet,
    pub tokens_in: u64,
    pub tokens_out: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    /// The system could not be re-read after a committed batch.
    #[error("system unreadable after commit: {0}")]
    Adapter(#[from] AdapterError),
}

/// Executes protocol steps for one system. Serializes steps: callers hold
/// `&mut` on the adapter for the duration of a step.
pub struct Engine {
    pub config: MapConfig,
    summarizer: Box<dyn Summarizer>,
    counter: Box<dyn TokenCounter>,
}

impl Default for Engine {
    fn default() -> Self {
        Engine::new(MapConfig::default())
    }
}

impl Engine {
    pub fn new(config: MapConfig) -> Self {
        Engine { config, summarizer: Box::new(ExtractiveSummarizer), counter: Box::new(BytesOverFour) }
    }

    pub fn with_summarizer(mut self, summarizer: Box<dyn Summarizer>) -> Self {
        self.summarizer = summarizer;
        self
    }

    pub fn with_token_counter(mut self, counter: Box<dyn TokenCounter>) -> Self {
        self.counter = counter;
        self
    }

    pub fn tokens(&self, bytes: &[u8]) -> u64 {
        self.counter.count(bytes)
    }

    pub fn summarizer(&self) -> &dyn Summarizer {
        self.summarizer.as_ref()
    }

    /// A rejection for a reply that never became a proposal.
    pub fn reject_unparseable(&self, current: &Scr, raw: &[u8], reason: &str) -> StepOutcome {
        StepOutcome {
            accepted: false,
            report: ValidationReport::rejection("", ViolationCode::MalformedRequest, reason),
            applied_actions: ActionSet::empty(),
            tokens_in: self.tokens(&canonical_serialize(current)),
            tokens_out: self.tokens(raw),
        }
    }

    /// One protocol step. A rejected proposal returns `current` unchanged.
    pub fn step(
        &self,
        current: &Scr,
        proposal: &Proposal,
        adapter: &mut dyn SystemAdapter,
    ) -> Result<(Scr, StepOutcome), EngineError> {
        let tokens_in = self.tokens(&canonical_serialize(current));
        let tokens_out = self.tokens(&proposal.canonical_bytes());
        let reject = |report: ValidationReport| {
            let outcome =
                StepOutcome { accepted: false, report, applied_actions: ActionSet::empty(), tokens_in, tokens_out };
            Ok((current.clone(), outcome))
        };

        let report = is_valid(current, proposal);
        if !report.valid {
            return reject(report);
        }
        let actions = extract_actions(proposal).expect("valid proposals carry no malformed request");
        if actions.is_empty() {
            let mut next = current.clone();
            next.clear_requests();
            let outcome = StepOutcome { accepted: true, report, applied_actions: actions, tokens_in, tokens_out };
            return Ok((next, outcome));
        }

        // Provide reads happen before any mutation so that a refused read
        // rejects the batch with the system untouched.
        for action in &actions {
            if let Request::Provide { target_fidelity } = action.request {
                if let Err(e) = provide_content(adapter, &self.config, self.summarizer(), &action.id, target_fidelity) {
                    return reject(ValidationReport::rejection(e.path(), e.code(), e.to_string()));
                }
            }
        }
        if actions.has_mutations() {
            if let Err(e) = apply_mutations(adapter, &actions) {
                return reject(ValidationReport::rejection(e.path(), e.code(), e.to_string()));
            }
        }

        let next = self.rebuild(current, &actions, adapter)?;
        let outcome = StepOutcome { accepted: true, report, applied_actions: actions, tokens_in, tokens_out };
        Ok((next, outcome))
    }

    /// Re-reads the system. Surviving files keep their fidelity (raised by
    /// any provide in `actions`), with summary/content refreshed from disk.
    fn rebuild(&self, current: &Scr, actions: &ActionSet, adapter: &dyn SystemAdapter) -> Result<Scr, AdapterError> {
        let prior: BTreeMap<&str, Fidelity> = current.components().map(|c| (c.id.as_str(), c.fidelity)).collect();
        let mut nodes = Vec::new();
        for entry in visible_entries(adapter, &self.config)? {
            if entry.kind == Kind::Directory {
                nodes.push(Component::directory(entry.path));
                continue;
            }
            let fidelity = match actions.get(&entry.path) {
                Some(Request::Provide { target_fidelity }) => *target_fidelity,
                _ => prior.get(entry.path.as_str()).copied().unwrap_or(Fidelity::Latent),
            };
            let digest = entry.digest.clone().expect("files carry digests");
            let mut node = Component::latent_file(entry.path.clone(), digest, entry.size);
            if fidelity > Fidelity::Latent {
                // A file that grew past the limit or became binary drops back to latent.
                if let Ok(Provided { summary, content, digest }) =
                    provide_content(adapter, &self.config, self.summarizer(), &entry.path, fidelity)
                {
                    node.fidelity = fidelity;
                    node.summary = summary;
                    node.content = content;
                    node.digest = Some(digest);
                }
            }
            nodes.push(node);
        }
        Ok(Scr::from_flat(current.revision + 1, current.task.clone(), nodes))
    }
}
