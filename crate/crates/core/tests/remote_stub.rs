//! RemotePolicy against a local HTTP stub agent.

use std::sync::{Arc, Mutex};
use std::thread;

use gatekeeper_core::harness::{run_episode, Predicate, TaskSpec};
use gatekeeper_core::policy::{
    Decision, Policy, ProposalTemplate, RemotePolicy, RemoteRequest, RequestTemplate, ScriptedPolicy,
};
use gatekeeper_core::scr::canonical_json;
use gatekeeper_core::{Engine, Ledger, ViolationCode, VirtualAdapter};
use serde_json::json;

/// Serves every request with `reply(body)` until the returned handle is dropped.
struct Stub {
    url: String,
    server: Arc<tiny_http::Server>,
    worker: Option<thread::JoinHandle<()>>,
}

impl Drop for Stub {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(w) = self.worker.take() {
            w.join().unwrap();
        }
    }
}

fn serve(mut reply: impl FnMut(RemoteRequest) -> Vec<u8> + Send + 'static) -> Stub {
    let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").unwrap());
    let url = format!("http://{}/", server.server_addr().to_ip().unwrap());
    let s = server.clone();
    let worker = thread::spawn(move || {
        for mut request in s.incoming_requests() {
            let mut body = Vec::new();
            request.as_reader().read_to_end(&mut body).unwrap();
            let parsed: RemoteRequest = serde_json::from_slice(&body).unwrap();
            request.respond(tiny_http::Response::from_data(reply(parsed))).unwrap();
        }
    });
    Stub { url, server, worker: Some(worker) }
}

fn system() -> VirtualAdapter {
    let mut v = VirtualAdapter::new();
    v.put("keep.txt", "keep");
    v.put("old/junk.txt", "junk");
    v
}

fn task() -> TaskSpec {
    TaskSpec {
        description: "remove the junk".into(),
        subtasks: vec![Predicate::FileAbsent { path: "old/junk.txt".into() }],
        max_steps: 5,
    }
}

fn done() -> Vec<u8> {
    br#"{"done":{"rationale":"nothing to do"}}"#.to_vec()
}

#[test]
fn immediate_done_takes_no_steps() {
    let stub = serve(|_| done());
    let mut policy = RemotePolicy::new(&stub.url);
    let mut ledger = Ledger::in_memory();
    let result = run_episode(&mut policy, &Engine::default(), &mut system(), &task(), &mut ledger, 0);
    assert_eq!(result.steps, 0);
    assert!(ledger.is_empty());
    assert_eq!(result.subtask_flags, [false]);
    assert!(result.aborted.is_none());
}

#[test]
fn remote_script_matches_local_script() {
    let script = vec![ProposalTemplate::single("old/junk.txt", RequestTemplate::Delete {})];
    let remote_side = Arc::new(Mutex::new(ScriptedPolicy::new(script.clone()).unwrap()));
    let seen = Arc::new(Mutex::new(Vec::new()));
    let (policy_ref, seen_ref) = (remote_side.clone(), seen.clone());
    let stub = serve(move |req| {
        seen_ref.lock().unwrap().push(req.last_outcome.is_some());
        match policy_ref.lock().unwrap().decide(&req.scr, &req.task, req.last_outcome.as_ref()).unwrap() {
            Decision::Propose(p) => canonical_json(&json!({ "proposal": p.scr })),
            _ => done(),
        }
    });

    let engine = Engine::default();
    let mut remote_ledger = Ledger::in_memory();
    let mut remote = RemotePolicy::new(&stub.url);
    let r = run_episode(&mut remote, &engine, &mut system(), &task(), &mut remote_ledger, 0);

    let mut local_ledger = Ledger::in_memory();
    let mut local = ScriptedPolicy::new(script).unwrap();
    let l = run_episode(&mut local, &engine, &mut system(), &task(), &mut local_ledger, 0);

    assert_eq!(remote_ledger.entries(), local_ledger.entries());
    assert_eq!(r.subtask_flags, [true]);
    assert_eq!((r.steps, r.total_tokens), (l.steps, l.total_tokens));
    assert_eq!(*seen.lock().unwrap(), [false, true]);
}

#[test]
fn garbage_reply_is_one_rejected_step() {
    let mut first = true;
    let stub = serve(move |_| if std::mem::take(&mut first) { b"this is not json".to_vec() } else { done() });
    let mut policy = RemotePolicy::new(&stub.url);
    let mut ledger = Ledger::in_memory();
    let result = run_episode(&mut policy, &Engine::default(), &mut system(), &task(), &mut ledger, 0);
    assert_eq!(result.steps, 1);
    let entry = &ledger.entries()[0];
    assert!(!entry.outcome.accepted);
    assert_eq!(entry.outcome.report.codes().collect::<Vec<_>>(), [ViolationCode::MalformedRequest]);
    assert_eq!(entry.pre_digest, entry.post_digest);
    assert_eq!(entry.proposal_canonical, "this is not json");
    assert_eq!(result.grounding_errors, 0);
}
