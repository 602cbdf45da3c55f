//! Trace trees and causal graphs.
//!
//! Starting from the failing event, reverse-causality queries expand a trace
//! tree breadth-first. Because the same event is reached along many causal
//! paths, the tree repeats nodes; consolidation merges every occurrence of a
//! `(signal, cycle)` key into one node and yields a DAG whose edges point
//! from cause to effect. Topological levels then order the DAG so that the
//! deepest causes sit at level 0 and the root at the highest level.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::event::{NodeKey, SignalEvent};
use crate::oracle::{CausalityOracle, OracleError};

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("Trace depth limit must be at least 1")]
    DepthZero,
    #[error("Causality query for {key} failed: {source}")]
    OracleFailure {
        key: NodeKey,
        #[source]
        source: OracleError,
    },
    #[error("Conflicting values for {key}: {existing:?} vs {incoming:?}")]
    ValueConflict { key: NodeKey, existing: String, incoming: String },
    #[error("Causal cycle detected through {key}")]
    CycleDetected { key: NodeKey },
    #[error("Graph has no nodes")]
    EmptyGraph,
}

/// Breadth-first expansion of a counterexample, before consolidation.
///
/// Node 0 is the failing root event. Each node stores the cause events the
/// oracle returned for it, in oracle order, as child subtrees. Shared causes
/// appear once per causal path, so the tree is usually much larger than the
/// graph it consolidates into.
#[derive(Debug, Clone)]
pub struct TraceTree {
    events: Vec<SignalEvent>,
    children: Vec<Vec<usize>>,
    parent: Vec<Option<usize>>,
    depth_limit: u64,
}

impl TraceTree {
    pub fn root(&self) -> &SignalEvent {
        &self.events[0]
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn event(&self, idx: usize) -> &SignalEvent {
        &self.events[idx]
    }

    /// Indices of the cause subtrees of `idx`, in oracle order.
    pub fn children(&self, idx: usize) -> &[usize] {
        &self.children[idx]
    }

    pub fn depth_limit(&self) -> u64 {
        self.depth_limit
    }

    /// Every root-to-leaf key path, in child order. Test and debug aid.
    pub fn paths(&self) -> Vec<Vec<NodeKey>> {
        let mut out = Vec::new();
        let mut stack = vec![(0usize, vec![self.events[0].key()])];
        while let Some((idx, path)) = stack.pop() {
            if self.children[idx].is_empty() {
                out.push(path);
                continue;
            }
            // Reverse push so paths come out in child order.
            for &child in self.children[idx].iter().rev() {
                let mut next = path.clone();
                next.push(self.events[child].key());
                stack.push((child, next));
            }
        }
        out
    }
}

/// Expands a trace tree by querying the oracle breadth-first from `root`.
///
/// The depth window is measured in cycles, not tree hops: the window is
/// anchored at the cycle preceding the root observation (the violation is
/// judged on the state of the cycle before it is reported), so a parent is
/// kept iff `parent.cycle + depth_limit + 1 >= root.cycle`. Parents outside
/// the window are dropped without being queried. Child order is preserved
/// exactly as the oracle returned it.
pub fn build_trace_tree(
    oracle: &dyn CausalityOracle,
    root: SignalEvent,
    depth_limit: u64,
) -> Result<TraceTree, GraphError> {
    if depth_limit == 0 {
        return Err(GraphError::DepthZero);
    }
    let root_cycle = root.cycle;
    let in_window = |cycle: u64| cycle + depth_limit + 1 >= root_cycle;

    let mut tree = TraceTree {
        events: vec![root],
        children: vec![Vec::new()],
        parent: vec![None],
        depth_limit,
    };
    let mut queue: VecDeque<usize> = VecDeque::from([0]);
    while let Some(idx) = queue.pop_front() {
        let key = tree.events[idx].key();
        let parents = oracle
            .parents_of(&key)
            .map_err(|source| GraphError::OracleFailure { key: key.clone(), source })?;
        for parent in parents {
            if !in_window(parent.cycle) {
                continue;
            }
            // A parent whose key already occurs on the path to the root
            // would expand forever; the causal order is broken.
            let parent_key = parent.key();
            let mut walk = Some(idx);
            while let Some(at) = walk {
                if tree.events[at].key() == parent_key {
                    return Err(GraphError::CycleDetected { key: parent_key });
                }
                walk = tree.parent[at];
            }
            let child_idx = tree.events.len();
            tree.events.push(parent);
            tree.children.push(Vec::new());
            tree.parent.push(Some(idx));
            tree.children[idx].push(child_idx);
            queue.push_back(child_idx);
        }
    }
    Ok(tree)
}

/// The consolidated causal DAG of one counterexample.
///
/// Nodes are identified by `(signal, cycle)`; the observed value is payload.
/// Edges point from cause to effect, so the failing root is the sink and
/// every node reaches it by following edges forward.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalGraph {
    root: NodeKey,
    values: BTreeMap<NodeKey, String>,
    edges: BTreeSet<(NodeKey, NodeKey)>,
    causes: BTreeMap<NodeKey, Vec<NodeKey>>,
    effects: BTreeMap<NodeKey, Vec<NodeKey>>,
}

#[derive(Serialize, Deserialize)]
struct GraphDoc {
    root: NodeKey,
    values: BTreeMap<NodeKey, String>,
    edges: Vec<(NodeKey, NodeKey)>,
}

impl Serialize for CausalGraph {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        GraphDoc {
            root: self.root.clone(),
            values: self.values.clone(),
            edges: self.edges.iter().cloned().collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for CausalGraph {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let doc = GraphDoc::deserialize(deserializer)?;
        let mut graph = CausalGraph {
            root: doc.root,
            values: doc.values,
            edges: doc.edges.into_iter().collect(),
            causes: BTreeMap::new(),
            effects: BTreeMap::new(),
        };
        graph.rebuild_adjacency();
        Ok(graph)
    }
}

impl CausalGraph {
    fn rebuild_adjacency(&mut self) {
        self.causes = self.values.keys().map(|k| (k.clone(), Vec::new())).collect();
        self.effects = self.values.keys().map(|k| (k.clone(), Vec::new())).collect();
        for (cause, effect) in &self.edges {
            self.causes.entry(effect.clone()).or_default().push(cause.clone());
            self.effects.entry(cause.clone()).or_default().push(effect.clone());
        }
    }

    pub fn root(&self) -> &NodeKey {
        &self.root
    }

    pub fn node_count(&self) -> usize {
        self.values.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn contains(&self, key: &NodeKey) -> bool {
        self.values.contains_key(key)
    }

    pub fn value_of(&self, key: &NodeKey) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// All node keys in canonical (cycle, signal) order.
    pub fn keys(&self) -> impl Iterator<Item = &NodeKey> {
        self.values.keys()
    }

    pub fn event_of(&self, key: &NodeKey) -> Option<SignalEvent> {
        self.values
            .get(key)
            .map(|v| SignalEvent { signal: key.signal.clone(), cycle: key.cycle, value: v.clone() })
    }

    /// Direct causes of `key`, in canonical order.
    pub fn causes_of(&self, key: &NodeKey) -> &[NodeKey] {
        self.causes.get(key).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Direct effects of `key`, in canonical order.
    pub fn effects_of(&self, key: &NodeKey) -> &[NodeKey] {
        self.effects.get(key).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn degree(&self, key: &NodeKey) -> usize {
        self.causes_of(key).len() + self.effects_of(key).len()
    }

    pub fn edges(&self) -> impl Iterator<Item = &(NodeKey, NodeKey)> {
        self.edges.iter()
    }

    pub fn has_edge(&self, cause: &NodeKey, effect: &NodeKey) -> bool {
        self.edges.contains(&(cause.clone(), effect.clone()))
    }

    /// Re-expresses the DAG as a trace tree by fully expanding shared
    /// subtrees from the root. Inverse of consolidation up to isomorphism;
    /// child order is canonical. Intended for round-trip checks, so callers
    /// should keep it away from graphs with heavy reconvergence.
    pub fn expand_to_tree(&self) -> TraceTree {
        let root = self.event_of(&self.root).expect("root node always present");
        let depth_limit = root.cycle + 1;
        let mut tree = TraceTree {
            events: vec![root],
            children: vec![Vec::new()],
            parent: vec![None],
            depth_limit,
        };
        let mut queue: VecDeque<usize> = VecDeque::from([0]);
        while let Some(idx) = queue.pop_front() {
            let key = tree.events[idx].key();
            for cause in self.causes_of(&key) {
                let child_idx = tree.events.len();
                tree.events.push(self.event_of(cause).expect("edges reference nodes"));
                tree.children.push(Vec::new());
                tree.parent.push(Some(idx));
                tree.children[idx].push(child_idx);
                queue.push_back(child_idx);
            }
        }
        tree
    }

    pub fn stats(&self, levels: &[Vec<NodeKey>]) -> GraphStats {
        let signals: BTreeSet<&str> = self.values.keys().map(|k| k.signal.as_str()).collect();
        GraphStats {
            node_count: self.node_count(),
            edge_count: self.edge_count(),
            unique_signal_count: signals.len(),
            max_depth: levels.len().saturating_sub(1),
        }
    }
}

/// Merges every occurrence of a `(signal, cycle)` key in the tree into one
/// graph node. Tree edges become cause-to-effect edges, deduplicated. Two
/// occurrences of a key with different values mean the trace is inconsistent
/// and consolidation refuses to guess.
pub fn consolidate(tree: &TraceTree) -> Result<CausalGraph, GraphError> {
    if tree.is_empty() {
        return Err(GraphError::EmptyGraph);
    }
    let mut values: BTreeMap<NodeKey, String> = BTreeMap::new();
    for event in &tree.events {
        let key = event.key();
        match values.get(&key) {
            None => {
                values.insert(key, event.value.clone());
            }
            Some(existing) if existing == &event.value => {}
            Some(existing) => {
                return Err(GraphError::ValueConflict {
                    existing: existing.clone(),
                    incoming: event.value.clone(),
                    key,
                });
            }
        }
    }
    let mut edges: BTreeSet<(NodeKey, NodeKey)> = BTreeSet::new();
    for (idx, children) in tree.children.iter().enumerate() {
        let effect = tree.events[idx].key();
        for &child in children {
            let cause = tree.events[child].key();
            if cause == effect {
                return Err(GraphError::CycleDetected { key: cause });
            }
            edges.insert((cause, effect.clone()));
        }
    }
    let mut graph = CausalGraph {
        root: tree.events[0].key(),
        values,
        edges,
        causes: BTreeMap::new(),
        effects: BTreeMap::new(),
    };
    graph.rebuild_adjacency();
    Ok(graph)
}

/// Orders the graph into topological levels.
///
/// Level 0 holds the nodes with no in-graph causes (the deepest causes);
/// every other node sits one past its deepest cause, so each edge goes from
/// a deeper level toward the root's level. Within a level, nodes are in
/// canonical (cycle, signal) order.
pub fn topological_levels(graph: &CausalGraph) -> Result<Vec<Vec<NodeKey>>, GraphError> {
    if graph.node_count() == 0 {
        return Err(GraphError::EmptyGraph);
    }
    let mut remaining: BTreeMap<&NodeKey, usize> =
        graph.keys().map(|k| (k, graph.causes_of(k).len())).collect();
    let mut level: BTreeMap<&NodeKey, usize> = BTreeMap::new();
    let mut queue: VecDeque<&NodeKey> = remaining
        .iter()
        .filter(|(_, &count)| count == 0)
        .map(|(&k, _)| k)
        .collect();
    for &k in &queue {
        level.insert(k, 0);
    }
    let mut processed = 0usize;
    while let Some(key) = queue.pop_front() {
        processed += 1;
        let this_level = level[key];
        for effect in graph.effects_of(key) {
            let deeper = level.entry(effect).or_insert(0);
            *deeper = (*deeper).max(this_level + 1);
            let count = remaining.get_mut(effect).expect("effect is a graph node");
            *count -= 1;
            if *count == 0 {
                queue.push_back(effect);
            }
        }
    }
    if processed != graph.node_count() {
        let witness = remaining
            .iter()
            .filter(|(_, &count)| count > 0)
            .map(|(&k, _)| k.clone())
            .next()
            .expect("unprocessed node exists when counts disagree");
        return Err(GraphError::CycleDetected { key: witness });
    }
    let depth = level.values().copied().max().unwrap_or(0);
    let mut levels: Vec<Vec<NodeKey>> = vec![Vec::new(); depth + 1];
    // Keys iterate in canonical order, so each level stays sorted.
    for key in graph.keys() {
        levels[level[key]].push(key.clone());
    }
    Ok(levels)
}

/// Shape summary of a causal graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphStats {
    pub node_count: usize,
    pub edge_count: usize,
    pub unique_signal_count: usize,
    pub max_depth: usize,
}
