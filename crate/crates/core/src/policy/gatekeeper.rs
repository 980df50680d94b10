use std::collections::BTreeSet;

use super::{select_provide_set, Decision, PlanStep, Planner, Policy, PolicyConfig, PolicyError};
use crate::adapter::SystemAdapter;
use crate::engine::StepOutcome;
use crate::scr::{Fidelity, Kind, Request, Scr};
use crate::validation::Proposal;

fn provide_full(scr: &Scr, ids: impl IntoIterator<Item = String>) -> Proposal {
    Proposal::with_requests(
        scr,
        scr.revision,
        ids.into_iter().map(|id| (id, Request::Provide { target_fidelity: Fidelity::Full })),
    )
}

fn planner_turn<P: Planner>(planner: &mut P, scr: &Scr, task: &str) -> Result<Decision, PolicyError> {
    match planner.next(scr, task)? {
        PlanStep::Mutate(t) => Ok(Decision::Propose(t.instantiate(scr))),
        PlanStep::Done => Ok(Decision::Done { rationale: "planner reports completion".into() }),
    }
}

/// Inference-first policy: request exactly the context whose value exceeds
/// its weighted token cost, and only then hand over to the planner.
pub struct GatekeeperPolicy<P: Planner> {
    config: PolicyConfig,
    planner: P,
    requested: BTreeSet<String>,
}

impl<P: Planner> GatekeeperPolicy<P> {
    pub fn new(config: PolicyConfig, planner: P) -> Self {
        GatekeeperPolicy { config, planner, requested: BTreeSet::new() }
    }
}

impl<P: Planner> Policy for GatekeeperPolicy<P> {
    fn decide(&mut self, scr: &Scr, task: &str, _last: Option<&StepOutcome>) -> Result<Decision, PolicyError> {
        // Components already asked for are not asked again, even if the
        // request was refused.
        let wanted: Vec<String> =
            select_provide_set(scr, task, &self.config).into_iter().filter(|id| !self.requested.contains(id)).collect();
        if !wanted.is_empty() {
            self.requested.extend(wanted.iter().cloned());
            return Ok(Decision::Propose(provide_full(scr, wanted)));
        }
        planner_turn(&mut self.planner, scr, task)
    }
}

#[derive(Debug, Clone)]
enum Selection {
    AllFiles,
    Ids(Vec<String>),
}

/// Fixed-context baselines: one up-front provide of a predetermined set of
/// files, then the planner.
pub struct ContextBaseline<P: Planner> {
    selection: Selection,
    planner: P,
    provided: bool,
}

/// Provides every file at full fidelity first.
pub fn baseline_full_context<P: Planner>(planner: P) -> ContextBaseline<P> {
    ContextBaseline { selection: Selection::AllFiles, planner, provided: false }
}

/// Provides the `n` most recently modified files first (ties broken by path).
pub fn baseline_recent_files<P: Planner>(
    adapter: &dyn SystemAdapter,
    n: usize,
    planner: P,
) -> Result<ContextBaseline<P>, PolicyError> {
    let mut files: Vec<_> = adapter
        .list_tree()
        .map_err(|e| PolicyError::PlannerUnavailable(e.to_string()))?
        .into_iter()
        .filter(|e| e.kind == Kind::File)
        .collect();
    files.sort_by(|a, b| b.modified.cmp(&a.modified).then_with(|| a.path.cmp(&b.path)));
    let ids = files.into_iter().take(n).map(|e| e.path).collect();
    Ok(ContextBaseline { selection: Selection::Ids(ids), planner, provided: false })
}

impl<P: Planner> ContextBaseline<P> {
    pub fn provide_set(&self, scr: &Scr) -> Vec<String> {
        let eligible = |id: &str| scr.find(id).is_some_and(|c| c.kind == Kind::File && c.fidelity < Fidelity::Full);
        match &self.selection {
            Selection::AllFiles => scr
                .components()
                .filter(|c| c.kind == Kind::File && c.fidelity < Fidelity::Full)
                .map(|c| c.id.clone())
                .collect(),
            Selection::Ids(ids) => ids.iter().filter(|id| eligible(id)).cloned().collect(),
        }
    }
}

impl<P: Planner> Policy for ContextBaseline<P> {
    fn decide(&mut self, scr: &Scr, task: &str, _last: Option<&StepOutcome>) -> Result<Decision, PolicyError> {
        if !self.provided {
            self.provided = true;
            let ids = self.provide_set(scr);
            if !ids.is_empty() {
                return Ok(Decision::Propose(provide_full(scr, ids)));
            }
        }
        planner_turn(&mut self.planner, scr, task)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::{build_latent_map, MapConfig, VirtualAdapter};
    use crate::policy::{ProposalTemplate, RequestTemplate, ScriptedPlanner};
    use crate::validation::extract_actions;

    fn tree() -> (VirtualAdapter, Scr) {
        let mut v = VirtualAdapter::new();
        v.put("docs/guide.md", &"g".repeat(200));
        v.put("src/parser.rs", &"p".repeat(200));
        v.put("src/lexer.rs", &"l".repeat(200));
        let scr = build_latent_map(&v, &MapConfig::default(), "fix the parser").unwrap();
        (v, scr)
    }

    fn provided_ids(d: Decision) -> Vec<String> {
        let Decision::Propose(p) = d else { panic!("{d:?}") };
        extract_actions(&p).unwrap().iter().map(|a| a.id.clone()).collect()
    }

    #[test]
    fn first_turn_provides_exactly_the_relevant_file() {
        let (_, scr) = tree();
        let mut p = GatekeeperPolicy::new(PolicyConfig::default(), ScriptedPlanner::new([]));
        let expected: Vec<_> = select_provide_set(&scr, &scr.task, &PolicyConfig::default()).into_iter().collect();
        assert_eq!(provided_ids(p.decide(&scr, &scr.task, None).unwrap()), expected);
        assert_eq!(expected, ["src/parser.rs"]);
        // Second turn: nothing new is worth providing, planner has nothing: done.
        assert!(matches!(p.decide(&scr, &scr.task, None).unwrap(), Decision::Done { .. }));
    }

    #[test]
    fn skips_to_planner_when_nothing_to_provide() {
        let (_, scr) = tree();
        let plan = ScriptedPlanner::new([ProposalTemplate::single("docs/guide.md", RequestTemplate::Delete {})]);
        let mut p = GatekeeperPolicy::new(PolicyConfig::default(), plan);
        let d = p.decide(&scr, "unrelated words", None).unwrap();
        assert_eq!(provided_ids(d), ["docs/guide.md"]);
    }

    #[test]
    fn baselines() {
        let (v, scr) = tree();
        let mut full = baseline_full_context(ScriptedPlanner::new([]));
        assert_eq!(provided_ids(full.decide(&scr, "", None).unwrap()).len(), 3);
        assert!(matches!(full.decide(&scr, "", None).unwrap(), Decision::Done { .. }));

        let mut recent = baseline_recent_files(&v, 1, ScriptedPlanner::new([])).unwrap();
        assert_eq!(provided_ids(recent.decide(&scr, "", None).unwrap()), ["src/lexer.rs"]);

        let many = baseline_recent_files(&v, 10, ScriptedPlanner::new([])).unwrap();
        let all = baseline_full_context(ScriptedPlanner::new([]));
        let mut a = many.provide_set(&scr);
        a.sort();
        assert_eq!(a, all.provide_set(&scr));
    }
}
