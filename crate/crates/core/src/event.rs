//! Signal events and node keys.
//!
//! A counterexample trace is a set of signal/cycle/value observations. Two
//! observations of the same signal in the same cycle denote the same node of
//! the causal graph; the value is payload, not identity.

use std::fmt;
use std::str::FromStr;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// One observed signal transition in a failure trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalEvent {
    pub signal: String,
    pub cycle: u64,
    pub value: String,
}

impl SignalEvent {
    pub fn new(signal: impl Into<String>, cycle: u64, value: impl Into<String>) -> Self {
        Self { signal: signal.into(), cycle, value: value.into() }
    }

    pub fn key(&self) -> NodeKey {
        NodeKey { signal: self.signal.clone(), cycle: self.cycle }
    }
}

impl fmt::Display for SignalEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}={}", self.signal, self.cycle, self.value)
    }
}

/// Identity of a causal graph node: the `(signal, cycle)` pair.
///
/// Rendered as `<signal>@<cycle>`. Signal names may contain dots and
/// brackets (hierarchical paths, bit selects); the cycle is decimal. Keys
/// order by cycle first, then signal text, which is the canonical ordering
/// used everywhere a deterministic sequence is required.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NodeKey {
    pub signal: String,
    pub cycle: u64,
}

impl NodeKey {
    pub fn new(signal: impl Into<String>, cycle: u64) -> Self {
        Self { signal: signal.into(), cycle }
    }
}

impl Ord for NodeKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.cycle.cmp(&other.cycle).then_with(|| self.signal.cmp(&other.signal))
    }
}

impl PartialOrd for NodeKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for NodeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.signal, self.cycle)
    }
}

/// Error produced when a node key string does not follow `<signal>@<cycle>`.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("Malformed node key {text:?}: {reason}")]
pub struct KeyParseError {
    pub text: String,
    pub reason: String,
}

impl FromStr for NodeKey {
    type Err = KeyParseError;

    /// Splits on the last `@` so signal names containing `@` never arise;
    /// everything after it must be a decimal cycle number.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = |reason: &str| KeyParseError { text: s.to_string(), reason: reason.to_string() };
        let at = s.rfind('@').ok_or_else(|| err("missing '@' separator"))?;
        let (signal, cycle_text) = (&s[..at], &s[at + 1..]);
        if signal.is_empty() {
            return Err(err("empty signal name"));
        }
        if cycle_text.is_empty() || !cycle_text.bytes().all(|b| b.is_ascii_digit()) {
            return Err(err("cycle is not a decimal number"));
        }
        let cycle = cycle_text.parse::<u64>().map_err(|_| err("cycle out of range"))?;
        Ok(NodeKey { signal: signal.to_string(), cycle })
    }
}

impl Serialize for NodeKey {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NodeKey {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(D::Error::custom)
    }
}
