//! Synthetic workloads shared by the benchmarks.

use gatekeeper_core::VirtualAdapter;

/// `n` files spread over `n / 10 + 1` directories, each about `bytes` long.
pub fn synthetic_tree(n: usize, bytes: usize) -> VirtualAdapter {
    let mut v = VirtualAdapter::new();
    let line = "fn handler(request) { return respond(request); }\n";
    let body = line.repeat(bytes / line.len() + 1);
    for i in 0..n {
        v.put(&format!("pkg{}/module_{i}.rs", i / 10), &body[..bytes]);
    }
    v
}
