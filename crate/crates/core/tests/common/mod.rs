//! Random trees and proposals shared by the integration tests.
#![allow(dead_code)]

use gatekeeper_core::{Digest, Fidelity, Kind, Proposal, Request, Scr, VirtualAdapter};
use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::json;

const NAMES: &[&str] = &["a", "b", "lib", "main.rs", "x.txt", "mod", "util.py", "z"];

fn random_text(rng: &mut impl Rng) -> String {
    let lines = rng.gen_range(0..6);
    (0..lines).map(|i| format!("line {i} {}\n", rng.gen_range(0..1000))).collect()
}

/// A random tree of up to `max_files` files in directories up to depth 2,
/// plus the occasional empty directory.
pub fn random_tree(rng: &mut impl Rng, max_files: usize) -> VirtualAdapter {
    let mut v = VirtualAdapter::new();
    let n = rng.gen_range(0..=max_files);
    let mut dirs: Vec<String> = vec![String::new()];
    let mut taken = std::collections::BTreeSet::new();
    for _ in 0..n {
        let parent = dirs.choose(rng).unwrap().clone();
        let name = *NAMES.choose(rng).unwrap();
        let path = if parent.is_empty() { name.to_owned() } else { format!("{parent}/{name}") };
        // Skip names that collide with an existing node.
        if !taken.insert(path.clone()) {
            continue;
        }
        if rng.gen_bool(0.25) && path.matches('/').count() < 2 {
            v.mkdir(&path);
            dirs.push(path);
        } else {
            v.put(&path, &random_text(rng));
        }
    }
    v
}

/// A proposal with a random set of requests, each valid against `scr`.
pub fn valid_proposal(rng: &mut impl Rng, scr: &Scr) -> Proposal {
    let mut requests: Vec<(String, Request)> = Vec::new();
    let mut used = std::collections::BTreeSet::new();
    let mut write_parents = std::collections::BTreeSet::new();
    let comps: Vec<_> = scr.components().skip(1).collect();
    for _ in 0..rng.gen_range(0..4) {
        match rng.gen_range(0..4) {
            0 => {
                let files: Vec<_> =
                    comps.iter().filter(|c| c.kind == Kind::File && c.fidelity < Fidelity::Full).collect();
                if let Some(c) = files.choose(rng) {
                    let target = if c.fidelity == Fidelity::Latent && rng.gen_bool(0.5) {
                        Fidelity::Summary
                    } else {
                        Fidelity::Full
                    };
                    if used.insert(c.id.clone()) {
                        requests.push((c.id.clone(), Request::Provide { target_fidelity: target }));
                    }
                }
            }
            1 => {
                let files: Vec<_> = comps.iter().filter(|c| c.kind == Kind::File).collect();
                if let Some(c) = files.choose(rng) {
                    if used.insert(c.id.clone()) {
                        let expected_digest = c.digest.clone().unwrap();
                        requests.push((c.id.clone(), Request::Edit { expected_digest, content: random_text(rng) }));
                    }
                }
            }
            2 => {
                let dirs: Vec<&str> = std::iter::once("")
                    .chain(comps.iter().filter(|c| c.kind == Kind::Directory).map(|c| c.id.as_str()))
                    .collect();
                let parent = *dirs.choose(rng).unwrap();
                let name = format!("new{}", rng.gen_range(0..100));
                let id = if parent.is_empty() { name } else { format!("{parent}/{name}") };
                if scr.find(&id).is_none() && used.insert(id.clone()) {
                    write_parents.insert(parent.to_owned());
                    requests.push((id, Request::Write { content: random_text(rng) }));
                }
            }
            _ => {
                let deletable: Vec<_> =
                    comps.iter().filter(|c| c.kind == Kind::File || c.children.is_empty()).collect();
                if let Some(c) = deletable.choose(rng) {
                    if !write_parents.contains(&c.id) && used.insert(c.id.clone()) {
                        requests.push((c.id.clone(), Request::Delete));
                    }
                }
            }
        }
    }
    // A write may have been drawn into a directory deleted earlier in the batch.
    let deleted: Vec<String> =
        requests.iter().filter(|(_, r)| *r == Request::Delete).map(|(id, _)| id.clone()).collect();
    requests.retain(|(id, r)| {
        !matches!(r, Request::Write { .. }) || !deleted.iter().any(|d| id.starts_with(&format!("{d}/")))
    });
    Proposal::with_requests(scr, scr.revision, requests)
}

/// Names the corruption applied by [`corrupt`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Corruption {
    StaleRevision,
    WrongDigest,
    UnknownId,
    WriteExisting,
    DeleteNonemptyDir,
    FidelityRegression,
    Malformed,
    TamperContent,
    TamperSize,
    ParentMissing,
}

pub const CORRUPTIONS: &[Corruption] = &[
    Corruption::StaleRevision,
    Corruption::WrongDigest,
    Corruption::UnknownId,
    Corruption::WriteExisting,
    Corruption::DeleteNonemptyDir,
    Corruption::FidelityRegression,
    Corruption::Malformed,
    Corruption::TamperContent,
    Corruption::TamperSize,
    Corruption::ParentMissing,
];

/// Adds one invalid element to `base`. Returns `None` when the chosen
/// corruption has no target in this document.
pub fn corrupt(rng: &mut impl Rng, scr: &Scr, base: &Proposal, kind: Corruption) -> Option<Proposal> {
    let mut p = base.clone();
    let files: Vec<_> = scr.components().filter(|c| c.kind == Kind::File).map(|c| c.id.clone()).collect();
    let free = |p: &Proposal, id: &str| p.scr.find(id).is_some_and(|c| c.request.is_none());
    let set = |p: &mut Proposal, id: &str, r: Request| p.scr.find_mut(id).unwrap().request = Some(r);
    match kind {
        Corruption::StaleRevision => {
            p.scr.revision = if scr.revision > 0 && rng.gen_bool(0.5) {
                scr.revision - 1
            } else {
                scr.revision + rng.gen_range(1..5)
            };
        }
        Corruption::WrongDigest => {
            let id = files.iter().filter(|id| free(&p, id)).collect::<Vec<_>>().choose(rng).cloned()?.clone();
            let expected_digest = Digest::of_str(&format!("stale {}", rng.gen::<u32>()));
            set(&mut p, &id, Request::Edit { expected_digest, content: "x".into() });
        }
        Corruption::UnknownId => {
            let req =
                if rng.gen_bool(0.5) { Request::Delete } else { Request::Provide { target_fidelity: Fidelity::Full } };
            let mut requests = requests_of(&p);
            requests.push((format!("ghost{}", rng.gen_range(0..100)), req));
            p = Proposal::with_requests(scr, p.scr.revision, requests);
        }
        Corruption::WriteExisting => {
            let id = files.iter().filter(|id| free(&p, id)).collect::<Vec<_>>().choose(rng).cloned()?.clone();
            set(&mut p, &id, Request::Write { content: "dup".into() });
        }
        Corruption::DeleteNonemptyDir => {
            let dirs: Vec<_> = scr
                .components()
                .skip(1)
                .filter(|c| c.kind == Kind::Directory && !c.children.is_empty() && free(&p, &c.id))
                .map(|c| c.id.clone())
                .collect();
            let id = dirs.choose(rng)?.clone();
            set(&mut p, &id, Request::Delete);
        }
        Corruption::FidelityRegression => {
            let ids: Vec<_> = scr
                .components()
                .filter(|c| c.kind == Kind::File && c.fidelity > Fidelity::Latent && free(&p, &c.id))
                .map(|c| (c.id.clone(), c.fidelity))
                .collect();
            let (id, f) = ids.choose(rng)?.clone();
            let target = if f == Fidelity::Full && rng.gen_bool(0.5) { Fidelity::Full } else { Fidelity::Summary };
            set(&mut p, &id, Request::Provide { target_fidelity: target });
        }
        Corruption::Malformed => {
            let id = scr
                .components()
                .skip(1)
                .map(|c| c.id.clone())
                .filter(|id| free(&p, id))
                .collect::<Vec<_>>()
                .choose(rng)?
                .clone();
            let junk = [
                json!({"explode": {}}),
                json!("delete"),
                json!({"edit": {"content": 3}}),
                json!({"provide": {"target_fidelity": "latent"}}),
            ];
            set(&mut p, &id, Request::Malformed(junk.choose(rng).unwrap().clone()));
        }
        Corruption::TamperContent => {
            let id = files.iter().filter(|id| free(&p, id)).collect::<Vec<_>>().choose(rng).cloned()?.clone();
            let c = p.scr.find_mut(&id).unwrap();
            c.content = Some(format!("{}tampered", c.content.clone().unwrap_or_default()));
        }
        Corruption::TamperSize => {
            let id = files.iter().filter(|id| free(&p, id)).collect::<Vec<_>>().choose(rng).cloned()?.clone();
            p.scr.find_mut(&id).unwrap().size_bytes += rng.gen_range(1..50);
        }
        Corruption::ParentMissing => {
            let mut requests = requests_of(&p);
            requests.push((format!("nodir{}/f", rng.gen_range(0..100)), Request::Write { content: "x".into() }));
            p = Proposal::with_requests(scr, p.scr.revision, requests);
        }
    }
    Some(p)
}

pub fn requests_of(p: &Proposal) -> Vec<(String, Request)> {
    p.scr.components().filter_map(|c| c.request.clone().map(|r| (c.id.clone(), r))).collect()
}
