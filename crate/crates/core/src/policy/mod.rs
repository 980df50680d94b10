//! Agent policies.
//!
//! Context selection trades the expected usefulness of a component against
//! the tokens it costs to retrieve:
//!
//! ```text
//! C* = argmax_{C ⊆ S_unsum}  Σ_{s∈C} score(s, task)  −  λ · Σ_{s∈C} cost(s)
//! ```
//!
//! With an additive value model the objective is separable, so the argmax is
//! exactly `{ s : score(s) > λ·cost(s) }`. Ties are excluded.

mod gatekeeper;
mod remote;
mod scripted;

pub use gatekeeper::{baseline_full_context, baseline_recent_files, ContextBaseline, GatekeeperPolicy};
pub use remote::{RemotePolicy, RemoteReply, RemoteRequest};
pub use scripted::{
    ActionTemplate, PlanFile, PlanStep, Planner, ProposalTemplate, RequestTemplate, ScriptedPlanner, ScriptedPolicy,
};

use std::collections::BTreeSet;
use std::sync::Arc;

use crate::engine::StepOutcome;
use crate::scr::{Component, Fidelity, Kind, Scr};
use crate::tokens::tokens_for_len;
use crate::validation::Proposal;

/// Largest candidate set for which exhaustive search is allowed.
pub const MAX_EXACT_THRESHOLD: usize = 20;
pub const DEFAULT_EXACT_THRESHOLD: usize = 12;
pub const DEFAULT_LAMBDA: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PolicyError {
    #[error("script must contain at least one proposal")]
    EmptyScript,
    #[error("script exhausted")]
    ScriptExhausted,
    #[error("planner unavailable: {0}")]
    PlannerUnavailable(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("invalid policy configuration: {0}")]
    InvalidConfig(String),
}

/// What a policy returns each turn.
#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    Propose(Proposal),
    /// A reply that could not be read as a proposal; recorded as a rejected step.
    Unparseable {
        raw: Vec<u8>,
        reason: String,
    },
    Done {
        rationale: String,
    },
}

pub trait Policy {
    fn decide(&mut self, scr: &Scr, task: &str, last_outcome: Option<&StepOutcome>) -> Result<Decision, PolicyError>;
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn decide(&mut self, scr: &Scr, task: &str, last_outcome: Option<&StepOutcome>) -> Result<Decision, PolicyError> {
        (**self).decide(scr, task, last_outcome)
    }
}

/// Expected usefulness of retrieving a component. Must be deterministic.
pub trait ValueModel: Send + Sync {
    fn score(&self, component: &Component, task: &str) -> f64;
}

/// Token cost of retrieving a component. Zero only for empty components.
pub trait CostModel: Send + Sync {
    fn cost(&self, component: &Component) -> f64;
}

/// Word overlap between the task and the component's path and summary.
#[derive(Debug, Clone, Copy, Default)]
pub struct RelevanceValue;

impl ValueModel for RelevanceValue {
    fn score(&self, component: &Component, task: &str) -> f64 {
        default_relevance(component, task)
    }
}

/// Estimated tokens of the component's bytes.
#[derive(Debug, Clone, Copy, Default)]
pub struct TokenCost;

impl CostModel for TokenCost {
    fn cost(&self, component: &Component) -> f64 {
        tokens_for_len(component.size_bytes) as f64
    }
}

#[derive(Clone)]
pub struct PolicyConfig {
    pub lambda: f64,
    pub value_model: Arc<dyn ValueModel>,
    pub cost_model: Arc<dyn CostModel>,
    pub exact_threshold: usize,
}

impl std::fmt::Debug for PolicyConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PolicyConfig")
            .field("lambda", &self.lambda)
            .field("exact_threshold", &self.exact_threshold)
            .finish_non_exhaustive()
    }
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            lambda: DEFAULT_LAMBDA,
            value_model: Arc::new(RelevanceValue),
            cost_model: Arc::new(TokenCost),
            exact_threshold: DEFAULT_EXACT_THRESHOLD,
        }
    }
}

impl PolicyConfig {
    pub fn new(lambda: f64) -> Result<Self, PolicyError> {
        PolicyConfig { lambda, ..Default::default() }.validated()
    }

    pub fn validated(self) -> Result<Self, PolicyError> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(PolicyError::InvalidConfig(format!(
                "lambda must be a non-negative number, got {}",
                self.lambda
            )));
        }
        if self.exact_threshold > MAX_EXACT_THRESHOLD {
            return Err(PolicyError::InvalidConfig(format!(
                "exact_threshold {} exceeds {MAX_EXACT_THRESHOLD}",
                self.exact_threshold
            )));
        }
        Ok(self)
    }
}

/// Lowercase alphanumeric words.
pub fn word_tokens(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).map(str::to_lowercase).collect()
}

/// Distinct task words found in the component id (weight 3) plus those found
/// in its summary (weight 1).
pub fn default_relevance(component: &Component, task: &str) -> f64 {
    let task = word_tokens(task);
    let in_id = word_tokens(&component.id).intersection(&task).count();
    let in_summary = component.summary.as_deref().map_or(0, |s| word_tokens(s).intersection(&task).count());
    (3 * in_id + in_summary) as f64
}

/// Separable argmax: include exactly the items whose net gain is positive.
pub fn select_separable(items: &[(f64, f64)], lambda: f64) -> Vec<bool> {
    items.iter().map(|&(score, cost)| score > lambda * cost).collect()
}

/// Exhaustive argmax over all subsets (bitmask encoding), preferring fewer
/// items on equal objective.
pub fn select_exhaustive(items: &[(f64, f64)], lambda: f64) -> Vec<bool> {
    assert!(items.len() <= MAX_EXACT_THRESHOLD, "exhaustive search over {} items", items.len());
    let mut best_mask = 0u32;
    let mut best_value = 0.0f64;
    for mask in 1u32..(1u32 << items.len()) {
        let value = subset_objective(items, mask, lambda);
        if value > best_value || (value == best_value && mask.count_ones() < best_mask.count_ones()) {
            best_mask = mask;
            best_value = value;
        }
    }
    (0..items.len()).map(|i| best_mask & (1 << i) != 0).collect()
}

fn subset_objective(items: &[(f64, f64)], mask: u32, lambda: f64) -> f64 {
    let (mut score, mut cost) = (0.0, 0.0);
    for (i, &(s, c)) in items.iter().enumerate() {
        if mask & (1 << i) != 0 {
            score += s;
            cost += c;
        }
    }
    score - lambda * cost
}

/// Ids of the file components worth retrieving at full fidelity now.
///
/// For small candidate sets the separable answer is cross-checked against
/// exhaustive search; the two must reach the same objective value.
pub fn select_provide_set(scr: &Scr, task: &str, config: &PolicyConfig) -> BTreeSet<String> {
    let candidates: Vec<&Component> =
        scr.components().filter(|c| c.kind == Kind::File && c.fidelity < Fidelity::Full).collect();
    let items: Vec<(f64, f64)> =
        candidates.iter().map(|c| (config.value_model.score(c, task), config.cost_model.cost(c))).collect();
    let chosen = select_separable(&items, config.lambda);
    if items.len() <= config.exact_threshold.min(MAX_EXACT_THRESHOLD) {
        let exact = select_exhaustive(&items, config.lambda);
        let mask = |sel: &[bool]| sel.iter().enumerate().fold(0u32, |m, (i, &b)| m | (u32::from(b) << i));
        let a = subset_objective(&items, mask(&chosen), config.lambda);
        let b = subset_objective(&items, mask(&exact), config.lambda);
        let tol = 1e-9 * a.abs().max(b.abs()).max(1.0);
        assert!((a - b).abs() <= tol, "separable selection ({a}) disagrees with exhaustive search ({b})");
    }
    candidates.into_iter().zip(chosen).filter(|(_, keep)| *keep).map(|(c, _)| c.id.clone()).collect()
}
