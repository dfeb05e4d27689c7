//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use prefixlab::env::{NodeId, WorldGraph};
use prefixlab::policy::Policy;

/// Softmax of `row / t`, computed directly.
pub fn softmax(row: &[f64], t: f64) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|x| ((x - m) / t).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|x| x / z).collect()
}

/// Exact probability that a rollout from `current`, with `used` actions already
/// spent, stops on `goal` within `budget` actions.
pub fn exact_accuracy(
    policy: &Policy,
    graph: &WorldGraph,
    goal: NodeId,
    current: NodeId,
    used: usize,
    budget: usize,
    t: f64,
) -> f64 {
    let n = graph.node_count();
    // v[u] = success probability at u with s actions used; iterate s downward
    let mut v = vec![0.0; n];
    for s in (used..budget).rev() {
        let mut next = vec![0.0; n];
        for u in 0..n {
            let p = softmax(policy.row(u, goal), t);
            let stop = *p.last().unwrap();
            let mut acc = if u == goal { stop } else { 0.0 };
            if s + 1 < budget {
                for (slot, &w) in graph.neighbors(u).iter().enumerate() {
                    acc += p[slot] * v[w];
                }
            }
            next[u] = acc;
        }
        v = next;
    }
    if used >= budget {
        0.0
    } else {
        v[current]
    }
}

pub fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let mut r: u128 = 1;
    for i in 0..k {
        r = r * (n - i) as u128 / (i + 1) as u128;
    }
    r
}
