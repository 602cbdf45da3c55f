//! Causality oracles.
//!
//! An oracle answers one question: which earlier signal events caused a given
//! event. The file-backed oracle serves answers from a causality dump
//! exported by a model checker; `crate::adapter` wraps a live external
//! process behind the same trait. Both must produce identical answers on
//! identical data, so graph construction never cares which one it talks to.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::event::{NodeKey, SignalEvent};

/// Answers reverse-causality queries for one counterexample.
///
/// Implementations are expected to be cheap to query repeatedly for the same
/// key (the adapter caches replies); callers issue queries from one logical
/// worker at a time.
pub trait CausalityOracle {
    /// Returns the direct cause events of `key`, in oracle order.
    fn parents_of(&self, key: &NodeKey) -> Result<Vec<SignalEvent>, OracleError>;
}

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error("Parse error in causality dump at {position}: {message}")]
    ParseError { position: String, message: String },
    #[error("Event {parent} is referenced as a parent of {child} but never defined")]
    DanglingParent { child: NodeKey, parent: NodeKey },
    #[error("Event {key} depends on itself through {via}")]
    SelfCycle { key: NodeKey, via: NodeKey },
    #[error("Unknown event {0}")]
    UnknownEvent(NodeKey),
    #[error("Failed to spawn causality adapter {command:?}: {message}")]
    ProcessSpawnFailure { command: String, message: String },
    #[error("Causality adapter protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("Causality adapter timed out after {seconds}s answering {key}")]
    Timeout { key: NodeKey, seconds: u64 },
    #[error("Causality adapter I/O failure: {0}")]
    Io(String),
}

/// One event record of a causality dump.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DumpEvent {
    pub signal: String,
    pub cycle: u64,
    pub value: String,
    #[serde(default)]
    pub parents: Vec<String>,
}

/// On-disk shape of a causality dump: the failing root event plus every
/// event record the checker exported, parents referenced by node key.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct DumpFile {
    root: String,
    events: Vec<DumpEvent>,
}

/// A parsed, validated causality dump serving oracle queries from memory.
#[derive(Debug, Clone)]
pub struct CausalityDump {
    root: NodeKey,
    events: BTreeMap<NodeKey, DumpRecord>,
}

#[derive(Debug, Clone)]
struct DumpRecord {
    value: String,
    parents: Vec<NodeKey>,
}

impl CausalityDump {
    /// Parses and validates a dump document.
    ///
    /// Every parent reference must resolve to a defined event, and no event
    /// may depend on itself, directly or transitively.
    pub fn parse(text: &str) -> Result<Self, OracleError> {
        let file: DumpFile = serde_json::from_str(text).map_err(|e| OracleError::ParseError {
            position: format!("line {} column {}", e.line(), e.column()),
            message: e.to_string(),
        })?;
        let schema_err = |message: String| OracleError::ParseError {
            position: "document".to_string(),
            message,
        };
        let root: NodeKey = file
            .root
            .parse()
            .map_err(|e: crate::event::KeyParseError| schema_err(format!("bad root key: {e}")))?;

        let mut events: BTreeMap<NodeKey, DumpRecord> = BTreeMap::new();
        let mut parent_lists: BTreeMap<NodeKey, Vec<NodeKey>> = BTreeMap::new();
        for record in &file.events {
            let key = NodeKey::new(record.signal.clone(), record.cycle);
            let mut parents = Vec::with_capacity(record.parents.len());
            for p in &record.parents {
                let parent: NodeKey = p
                    .parse()
                    .map_err(|e: crate::event::KeyParseError| schema_err(format!("bad parent key of {key}: {e}")))?;
                parents.push(parent);
            }
            parent_lists.insert(key.clone(), parents.clone());
            let prior = events.insert(key.clone(), DumpRecord { value: record.value.clone(), parents });
            if prior.is_some() {
                return Err(schema_err(format!("duplicate event record for {key}")));
            }
        }
        if !events.contains_key(&root) {
            return Err(schema_err(format!("root event {root} has no record")));
        }
        for (child, parents) in &parent_lists {
            for parent in parents {
                if !events.contains_key(parent) {
                    return Err(OracleError::DanglingParent {
                        child: child.clone(),
                        parent: parent.clone(),
                    });
                }
            }
        }
        Self::check_self_cycles(&events)?;
        Ok(Self { root, events })
    }

    /// Depth-first cycle check over the parent relation.
    fn check_self_cycles(events: &BTreeMap<NodeKey, DumpRecord>) -> Result<(), OracleError> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            InProgress,
            Done,
        }
        let mut marks: BTreeMap<&NodeKey, Mark> = BTreeMap::new();
        for start in events.keys() {
            if marks.contains_key(start) {
                continue;
            }
            // Iterative DFS; (key, next parent index) frames.
            let mut stack: Vec<(&NodeKey, usize)> = vec![(start, 0)];
            marks.insert(start, Mark::InProgress);
            while let Some((key, idx)) = stack.pop() {
                let parents = &events[key].parents;
                if idx >= parents.len() {
                    marks.insert(key, Mark::Done);
                    continue;
                }
                stack.push((key, idx + 1));
                let parent = &parents[idx];
                match marks.get(parent) {
                    Some(Mark::InProgress) => {
                        return Err(OracleError::SelfCycle { key: parent.clone(), via: key.clone() });
                    }
                    Some(Mark::Done) => {}
                    None => {
                        marks.insert(parent, Mark::InProgress);
                        stack.push((parent, 0));
                    }
                }
            }
        }
        Ok(())
    }

    /// The failing event the dump was exported for.
    pub fn root_event(&self) -> SignalEvent {
        self.event_of(&self.root).expect("root is validated at parse time")
    }

    pub fn root_key(&self) -> &NodeKey {
        &self.root
    }

    pub fn event_of(&self, key: &NodeKey) -> Option<SignalEvent> {
        self.events.get(key).map(|r| SignalEvent {
            signal: key.signal.clone(),
            cycle: key.cycle,
            value: r.value.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &NodeKey> {
        self.events.keys()
    }
}

impl fmt::Display for CausalityDump {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "causality dump: root {}, {} events", self.root, self.events.len())
    }
}

impl CausalityOracle for CausalityDump {
    fn parents_of(&self, key: &NodeKey) -> Result<Vec<SignalEvent>, OracleError> {
        let record = self.events.get(key).ok_or_else(|| OracleError::UnknownEvent(key.clone()))?;
        Ok(record
            .parents
            .iter()
            .map(|p| self.event_of(p).expect("parents are validated at parse time"))
            .collect())
    }
}

/// Loads a causality dump from a file on disk.
pub fn load_dump(path: &Path) -> Result<CausalityDump, OracleError> {
    let text = std::fs::read_to_string(path).map_err(|e| OracleError::ParseError {
        position: path.display().to_string(),
        message: e.to_string(),
    })?;
    CausalityDump::parse(&text)
}

/// Serializes a dump back into the on-disk document shape. Event order is
/// canonical (cycle, then signal), so equal dumps serialize identically.
pub fn dump_to_json(dump: &CausalityDump) -> String {
    let events: Vec<DumpEvent> = dump
        .events
        .iter()
        .map(|(key, record)| DumpEvent {
            signal: key.signal.clone(),
            cycle: key.cycle,
            value: record.value.clone(),
            parents: record.parents.iter().map(|p| p.to_string()).collect(),
        })
        .collect();
    let file = DumpFile { root: dump.root.to_string(), events };
    serde_json::to_string_pretty(&file).expect("dump document always serializes")
}

/// Builds a dump in memory from records; used by fixtures and generators.
pub fn dump_from_records(
    root: &str,
    records: impl IntoIterator<Item = DumpEvent>,
) -> Result<CausalityDump, OracleError> {
    let file = DumpFile { root: root.to_string(), events: records.into_iter().collect() };
    CausalityDump::parse(&serde_json::to_string(&file).expect("record document always serializes"))
}
