mod common;

use std::collections::BTreeSet;

use gatekeeper_core::adapter::{Fault, Mutation};
use gatekeeper_core::harness::{audit_ledger, run_episode, Predicate, TaskSpec};
use gatekeeper_core::policy::{
    baseline_full_context, select_separable, Decision, GatekeeperPolicy, Policy, PolicyConfig, ProposalTemplate,
    RequestTemplate, ScriptedPlanner, ScriptedPolicy,
};
use gatekeeper_core::{
    build_latent_map, canonical_serialize, estimate_tokens, is_valid, parse, scr_digest, verify_sync, Digest, Engine,
    Kind, Ledger, MapConfig, Proposal, Request, Scr, SystemAdapter, ViolationCode,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{corrupt, random_tree, valid_proposal, Corruption, CORRUPTIONS};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A random tree and its document after a few accepted steps, so that
/// summary and full fidelity appear.
fn evolved(seed: u64) -> (gatekeeper_core::VirtualAdapter, Scr) {
    let mut r = rng(seed);
    let mut tree = random_tree(&mut r, 10);
    let engine = Engine::default();
    let mut scr = build_latent_map(&tree, &engine.config, "prop").unwrap();
    for _ in 0..3 {
        let p = valid_proposal(&mut r, &scr);
        scr = engine.step(&scr, &p, &mut tree).unwrap().0;
    }
    (tree, scr)
}

fn expected_codes(kind: Corruption) -> &'static [ViolationCode] {
    match kind {
        Corruption::StaleRevision => &[ViolationCode::StaleRevision],
        Corruption::WrongDigest => &[ViolationCode::DigestMismatch],
        Corruption::UnknownId => &[ViolationCode::UnknownComponent],
        Corruption::WriteExisting => &[ViolationCode::WriteExists],
        Corruption::DeleteNonemptyDir => &[ViolationCode::DeleteNonemptyDir],
        Corruption::FidelityRegression => &[ViolationCode::FidelityRegression, ViolationCode::AlreadyFull],
        Corruption::Malformed => &[ViolationCode::MalformedRequest],
        Corruption::TamperContent | Corruption::TamperSize => &[ViolationCode::ContentTampering],
        Corruption::ParentMissing => &[ViolationCode::ParentMissing],
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn round_trip(seed in any::<u64>()) {
        let (_, scr) = evolved(seed);
        let bytes = canonical_serialize(&scr);
        let back = parse(&bytes).unwrap();
        prop_assert_eq!(&back, &scr);
        prop_assert_eq!(canonical_serialize(&back), bytes);
    }

    #[test]
    fn canonical_form_ignores_construction_order(seed in any::<u64>()) {
        let (_, scr) = evolved(seed);
        let mut nodes: Vec<_> = scr.components().skip(1).map(|c| {
            let mut c = c.clone();
            c.children.clear();
            c
        }).collect();
        nodes.shuffle(&mut rng(seed ^ 1));
        let rebuilt = Scr::from_flat(scr.revision, scr.task.clone(), nodes);
        prop_assert_eq!(canonical_serialize(&rebuilt), canonical_serialize(&scr));
    }

    #[test]
    fn token_estimate_monotone(a in 0usize..4096, b in 0usize..4096) {
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(estimate_tokens(&vec![b'x'; lo]) <= estimate_tokens(&vec![b'x'; hi]));
    }

    #[test]
    fn validation_is_pure_and_noop_is_valid(seed in any::<u64>()) {
        let (_, scr) = evolved(seed);
        let p = valid_proposal(&mut rng(seed), &scr);
        prop_assert_eq!(is_valid(&scr, &p), is_valid(&scr, &p));
        prop_assert!(is_valid(&scr, &p).valid);
        prop_assert!(is_valid(&scr, &Proposal::noop(&scr)).valid);
    }

    #[test]
    fn corruption_reports_its_code(seed in any::<u64>(), k in 0usize..10) {
        let (_, scr) = evolved(seed);
        let mut r = rng(seed);
        let base = Proposal::noop(&scr);
        if let Some(p) = corrupt(&mut r, &scr, &base, CORRUPTIONS[k]) {
            let report = is_valid(&scr, &p);
            prop_assert!(!report.valid);
            prop_assert!(report.codes().any(|c| expected_codes(CORRUPTIONS[k]).contains(&c)), "{:?}", report);
        }
    }

    #[test]
    fn revision_moves_only_on_accept(seed in any::<u64>(), k in 0usize..10) {
        let (mut tree, scr) = evolved(seed);
        let mut r = rng(seed);
        let base = valid_proposal(&mut r, &scr);
        let engine = Engine::default();
        match corrupt(&mut r, &scr, &base, CORRUPTIONS[k]) {
            Some(bad) => {
                let (next, out) = engine.step(&scr, &bad, &mut tree).unwrap();
                prop_assert!(!out.accepted);
                prop_assert_eq!(next.revision, scr.revision);
            }
            None => {
                let (next, out) = engine.step(&scr, &base, &mut tree).unwrap();
                prop_assert!(out.accepted);
                let moved = u64::from(!out.applied_actions.is_empty());
                prop_assert_eq!(next.revision, scr.revision + moved);
            }
        }
    }

    #[test]
    fn latent_map_is_synchronized(seed in any::<u64>()) {
        let tree = random_tree(&mut rng(seed), 15);
        let config = MapConfig::default();
        let scr = build_latent_map(&tree, &config, "").unwrap();
        prop_assert!(verify_sync(&scr, &tree, &config).unwrap().is_empty());
        prop_assert!(scr.components().all(|c| c.content.is_none() && c.summary.is_none()));
    }

    #[test]
    fn latent_map_carries_no_content(seed in any::<u64>()) {
        let mut tree = random_tree(&mut rng(seed), 10);
        let config = MapConfig::default();
        let before = build_latent_map(&tree, &config, "").unwrap();
        let files: Vec<_> = before.components().filter(|c| c.kind == Kind::File).map(|c| c.id.clone()).collect();
        prop_assume!(!files.is_empty());
        let id = &files[seed as usize % files.len()];
        let text = tree.read(id).unwrap();
        tree.put(id, &text.repeat(2));
        let after = build_latent_map(&tree, &config, "").unwrap();
        for (a, b) in before.components().zip(after.components()) {
            let mut b = b.clone();
            if &a.id == id {
                b.size_bytes = a.size_bytes;
                b.digest = a.digest.clone();
            }
            let mut a = a.clone();
            a.children.clear();
            b.children.clear();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn rollback_is_total(seed in any::<u64>(), n in 0usize..4, commit in any::<bool>()) {
        let (mut tree, scr) = evolved(seed);
        let before = tree.to_manifest();
        let mut r = rng(seed);
        let p = valid_proposal(&mut r, &scr);
        tree.inject_fault(Some(if commit { Fault::Commit } else { Fault::NthApply(n) }));
        let (next, out) = Engine::default().step(&scr, &p, &mut tree).unwrap();
        if !out.accepted {
            prop_assert_eq!(tree.to_manifest(), before);
            prop_assert_eq!(scr_digest(&next), scr_digest(&scr));
        }
    }

    #[test]
    fn selection_shrinks_as_lambda_grows(
        items in prop::collection::vec((0.0f64..50.0, 0.0f64..500.0), 0..20),
        l1 in 0.0f64..1.0,
        l2 in 0.0f64..1.0,
    ) {
        let (lo, hi) = (l1.min(l2), l1.max(l2));
        let a = select_separable(&items, lo);
        let b = select_separable(&items, hi);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!(*x || !*y);
        }
    }

    #[test]
    fn selection_is_scale_invariant(
        items in prop::collection::vec((0u32..50, 0u32..500), 0..20),
        num in 0u32..32,
        shift in 0i32..6,
    ) {
        // Powers of two keep every product exact.
        let c = 2f64.powi(shift);
        let lambda = f64::from(num) / 16.0;
        let base: Vec<(f64, f64)> = items.iter().map(|&(s, k)| (f64::from(s), f64::from(k))).collect();
        let scaled: Vec<(f64, f64)> = base.iter().map(|&(s, k)| (s * c, k * c)).collect();
        prop_assert_eq!(select_separable(&base, lambda), select_separable(&scaled, lambda));
    }

    #[test]
    fn policy_is_pure(seed in any::<u64>()) {
        let (_, scr) = evolved(seed);
        let run = || {
            let plan = ScriptedPlanner::new([ProposalTemplate::single("a", RequestTemplate::Delete {})]);
            let mut p = GatekeeperPolicy::new(PolicyConfig::default(), plan);
            (0..3).map(|_| p.decide(&scr, "a lib main", None).unwrap()).collect::<Vec<Decision>>()
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn ledger_accounts_for_metrics(seed in any::<u64>()) {
        let (tree, scr) = evolved(seed);
        let files: Vec<_> = scr.components().filter(|c| c.kind == Kind::File).map(|c| c.id.clone()).collect();
        let mut r = rng(seed);
        // A mix of good and stale steps.
        let mut script = Vec::new();
        for id in files.iter().take(4) {
            let request = match rand::Rng::gen_range(&mut r, 0..3) {
                0 => RequestTemplate::Delete {},
                1 => RequestTemplate::Edit { expected_digest: None, believed_content: Some("stale".into()), content: "x".into() },
                _ => RequestTemplate::Provide { target_fidelity: gatekeeper_core::Fidelity::Full },
            };
            script.push(ProposalTemplate::single(id, request));
        }
        script.push(ProposalTemplate::single("ghost", RequestTemplate::Delete {}));
        let mut policy = ScriptedPolicy::new(script).unwrap();
        let engine = Engine::default();
        let task = TaskSpec { description: "t".into(), subtasks: vec![Predicate::FileAbsent { path: "ghost".into() }], max_steps: 10 };
        let mut ledger = Ledger::in_memory();
        let mut system = tree.clone();
        let result = run_episode(&mut policy, &engine, &mut system, &task, &mut ledger, 0);

        let (errors, tokens) = audit_ledger(ledger.entries());
        prop_assert_eq!(errors, result.grounding_errors);
        prop_assert_eq!(tokens, result.total_tokens);
        prop_assert!(result.grounding_errors >= 1);
        for e in ledger.entries() {
            let grounding = e.outcome.report.codes().any(|c| c.is_grounding_error());
            prop_assert_eq!(grounding && !e.outcome.accepted, !e.outcome.accepted && e.outcome.report.has_grounding_error());
            prop_assert_eq!(e.outcome.tokens_out, engine.tokens(e.proposal_canonical.as_bytes()));
        }
    }

    #[test]
    fn gatekeeper_beats_full_context_with_one_relevant_file(n in 2usize..8, size in 40usize..400, pick in 0usize..8) {
        let mut tree = gatekeeper_core::VirtualAdapter::new();
        // Names share no words, so only the named file scores.
        let names: Vec<String> = (0..n).map(|i| format!("f{i}")).collect();
        for name in &names {
            tree.put(name, &"z".repeat(size));
        }
        let relevant = &names[pick % n];
        let task = TaskSpec {
            description: format!("update {relevant}"),
            subtasks: vec![Predicate::FileExists { path: relevant.clone() }],
            max_steps: 3,
        };
        let engine = Engine::default();
        let tokens = |mut policy: Box<dyn Policy>| {
            let mut system = tree.clone();
            run_episode(policy.as_mut(), &engine, &mut system, &task, &mut Ledger::in_memory(), 0).total_tokens
        };
        let gk = tokens(Box::new(GatekeeperPolicy::new(PolicyConfig::default(), ScriptedPlanner::new([]))));
        let full = tokens(Box::new(baseline_full_context(ScriptedPlanner::new([]))));
        prop_assert!(gk < full, "gatekeeper {} vs full {}", gk, full);
    }
}

#[test]
fn every_code_has_an_isolated_trigger() {
    let mut tree = gatekeeper_core::VirtualAdapter::new();
    tree.put("d/f", "body");
    tree.put("g", "g");
    let engine = Engine::default();
    let scr = build_latent_map(&tree, &engine.config, "").unwrap();
    let full = engine
        .step(
            &scr,
            &Proposal::with_requests(
                &scr,
                0,
                [("g".to_owned(), Request::Provide { target_fidelity: gatekeeper_core::Fidelity::Full })],
            ),
            &mut tree,
        )
        .unwrap()
        .0;
    let summary = engine
        .step(
            &scr,
            &Proposal::with_requests(
                &scr,
                0,
                [("g".to_owned(), Request::Provide { target_fidelity: gatekeeper_core::Fidelity::Summary })],
            ),
            &mut tree.clone(),
        )
        .unwrap()
        .0;
    let one = |current: &Scr, id: &str, request: Request| {
        Proposal::with_requests(current, current.revision, [(id.to_owned(), request)])
    };
    let cases: Vec<(Scr, Proposal, ViolationCode)> = vec![
        (scr.clone(), Proposal::with_requests(&scr, 5, []), ViolationCode::StaleRevision),
        (scr.clone(), one(&scr, "nope", Request::Delete), ViolationCode::UnknownComponent),
        (scr.clone(), one(&scr, "x/y", Request::Write { content: String::new() }), ViolationCode::ParentMissing),
        (
            scr.clone(),
            one(&scr, "g", Request::Edit { expected_digest: Digest::of_str("old"), content: String::new() }),
            ViolationCode::DigestMismatch,
        ),
        (
            summary.clone(),
            one(&summary, "g", Request::Provide { target_fidelity: gatekeeper_core::Fidelity::Summary }),
            ViolationCode::FidelityRegression,
        ),
        (
            full.clone(),
            one(&full, "g", Request::Provide { target_fidelity: gatekeeper_core::Fidelity::Full }),
            ViolationCode::AlreadyFull,
        ),
        (scr.clone(), one(&scr, "d", Request::Delete), ViolationCode::DeleteNonemptyDir),
        (scr.clone(), one(&scr, "g", Request::Write { content: String::new() }), ViolationCode::WriteExists),
        (scr.clone(), one(&scr, "g", Request::Malformed(serde_json::json!("zap"))), ViolationCode::MalformedRequest),
    ];
    for (current, proposal, code) in cases {
        let report = is_valid(&current, &proposal);
        let codes: BTreeSet<_> = report.codes().collect();
        assert_eq!(codes, BTreeSet::from([code]), "{report:?}");
    }
    let mut tampered = Proposal::noop(&full);
    tampered.scr.find_mut("g").unwrap().content = Some("G".into());
    let codes: BTreeSet<_> = is_valid(&full, &tampered).codes().collect();
    assert_eq!(codes, BTreeSet::from([ViolationCode::ContentTampering]));
}

#[test]
fn rollback_on_every_fault_point() {
    let mut tree = gatekeeper_core::VirtualAdapter::new();
    for name in ["a", "b", "c"] {
        tree.put(name, name);
    }
    let before = tree.list_tree().unwrap();
    for n in 0..3 {
        let mut t = tree.clone();
        t.inject_fault(Some(Fault::NthApply(n)));
        t.begin().unwrap();
        let mut failed = false;
        for name in ["a", "b", "c"] {
            if t.apply(name, &Mutation::Delete).is_err() {
                failed = true;
                break;
            }
        }
        assert!(failed);
        t.rollback().unwrap();
        assert_eq!(t.list_tree().unwrap(), before);
    }
}
