//! Synthetic benchmark graphs.
//!
//! Deterministic generator for a load-store-unit sized counterexample: 170
//! nodes over 122 distinct signals connected by 239 causal edges, with a
//! backbone chain deep enough to exercise many topological levels. Used by
//! scale tests so they never depend on proprietary designs.

use std::collections::BTreeSet;

use crate::oracle::{dump_from_records, CausalityDump, DumpEvent};

pub const LSU_NODE_COUNT: usize = 170;
pub const LSU_EDGE_COUNT: usize = 239;
pub const LSU_SIGNAL_COUNT: usize = 122;

const TREE_EDGES: usize = LSU_NODE_COUNT - 1;
const EXTRA_EDGES: usize = LSU_EDGE_COUNT - TREE_EDGES;
const CHAIN_LEN: usize = 24;

fn signal_of(i: usize) -> String {
    if i == 0 {
        "as__lsu_request_ack".to_string()
    } else {
        // 169 non-root nodes over 121 signals: signals 1..=48 occur twice,
        // the rest once, giving 122 distinct signals with the root's.
        format!("u_lsu.sig_{:03}", (i - 1) % 121 + 1)
    }
}

fn cycle_of(i: usize) -> u64 {
    if i == 0 {
        20
    } else {
        // Nine nodes per cycle, marching from 19 down to 1. A signal's two
        // occurrences land 13 cycles apart, so node keys never collide.
        19 - ((i - 1) / 9) as u64
    }
}

fn value_of(i: usize) -> String {
    match i {
        0 => "FAIL".to_string(),
        i if i % 2 == 0 => "1'b0".to_string(),
        _ => "1'b1".to_string(),
    }
}

/// Builds the LSU-shaped causality dump.
pub fn lsu_shaped_dump() -> CausalityDump {
    // parents[effect] lists cause indices; a spanning structure first, so
    // every node has a causal path to the root.
    let mut parents: Vec<Vec<usize>> = vec![Vec::new(); LSU_NODE_COUNT];
    let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    for i in 1..LSU_NODE_COUNT {
        let effect = if i <= CHAIN_LEN { i - 1 } else { (i - 1) / 2 };
        parents[effect].push(i);
        edges.insert((i, effect));
    }
    // Cross edges from deep nodes to shallow ones create the reconvergence
    // a real trace shows. Effects stay below index 99 so the full tree
    // expansion of the graph remains small.
    let mut added = 0;
    let mut k = 0usize;
    while added < EXTRA_EDGES {
        let cause = 99 + (k % 70);
        let effect = (k * 37 + 11) % 98 + 1;
        k += 1;
        if edges.insert((cause, effect)) {
            parents[effect].push(cause);
            added += 1;
        }
    }

    let records: Vec<DumpEvent> = (0..LSU_NODE_COUNT)
        .map(|i| DumpEvent {
            signal: signal_of(i),
            cycle: cycle_of(i),
            value: value_of(i),
            parents: parents[i]
                .iter()
                .map(|&p| format!("{}@{}", signal_of(p), cycle_of(p)))
                .collect(),
        })
        .collect();
    dump_from_records(&format!("{}@{}", signal_of(0), cycle_of(0)), records)
        .expect("generated dump is structurally valid")
}
