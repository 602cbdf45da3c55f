//! External causality adapter.
//!
//! Bridges a running checker process behind the oracle trait. The protocol
//! is line-oriented over stdin/stdout:
//!
//! ```text
//! -> WHY <node-key>
//! <- PARENTS <n>
//! <- <signal> <cycle> <value>     (n times)
//! ```
//!
//! or `ERR <message>` in place of a `PARENTS` reply. Replies are cached per
//! key so repeated queries for shared nodes cost one round trip.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use crate::event::{NodeKey, SignalEvent};
use crate::oracle::{CausalityOracle, OracleError};

pub const DEFAULT_ADAPTER_TIMEOUT: Duration = Duration::from_secs(60);

/// Causality oracle backed by an external adapter process.
pub struct AdapterOracle {
    inner: Mutex<AdapterProcess>,
    cache: Mutex<BTreeMap<NodeKey, Vec<SignalEvent>>>,
    timeout: Duration,
}

struct AdapterProcess {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

/// Spawns `command` and speaks the causality protocol with it.
///
/// The command line is split on whitespace with single and double quotes
/// respected; no other shell features apply.
pub fn adapter_oracle(command: &str, timeout: Duration) -> Result<AdapterOracle, OracleError> {
    let words = split_command(command).map_err(|message| OracleError::ProcessSpawnFailure {
        command: command.to_string(),
        message,
    })?;
    let (program, args) = words.split_first().ok_or_else(|| OracleError::ProcessSpawnFailure {
        command: command.to_string(),
        message: "empty command".to_string(),
    })?;
    let mut child = Command::new(program)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| OracleError::ProcessSpawnFailure {
            command: command.to_string(),
            message: e.to_string(),
        })?;
    let stdin = child.stdin.take().expect("stdin was piped");
    let stdout = child.stdout.take().expect("stdout was piped");
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let reader = BufReader::new(stdout);
        for line in reader.lines() {
            let failed = line.is_err();
            if tx.send(line).is_err() || failed {
                break;
            }
        }
    });
    Ok(AdapterOracle {
        inner: Mutex::new(AdapterProcess { child, stdin, lines: rx }),
        cache: Mutex::new(BTreeMap::new()),
        timeout,
    })
}

/// Minimal quote-aware splitter for adapter command lines.
fn split_command(command: &str) -> Result<Vec<String>, String> {
    let mut words = Vec::new();
    let mut current = String::new();
    let mut in_word = false;
    let mut quote: Option<char> = None;
    for c in command.chars() {
        match quote {
            Some(q) if c == q => quote = None,
            Some(_) => current.push(c),
            None if c == '\'' || c == '"' => {
                quote = Some(c);
                in_word = true;
            }
            None if c.is_whitespace() => {
                if in_word {
                    words.push(std::mem::take(&mut current));
                    in_word = false;
                }
            }
            None => {
                current.push(c);
                in_word = true;
            }
        }
    }
    if quote.is_some() {
        return Err("unterminated quote".to_string());
    }
    if in_word {
        words.push(current);
    }
    Ok(words)
}

impl AdapterOracle {
    fn query(&self, key: &NodeKey) -> Result<Vec<SignalEvent>, OracleError> {
        let mut proc = self.inner.lock().expect("adapter lock never poisoned");
        writeln!(proc.stdin, "WHY {key}")
            .and_then(|_| proc.stdin.flush())
            .map_err(|e| OracleError::Io(e.to_string()))?;

        let deadline = Instant::now() + self.timeout;
        let header = read_line(&mut proc, deadline, key, self.timeout.as_secs())?;
        if let Some(message) = header.strip_prefix("ERR ") {
            return Err(OracleError::ProtocolViolation(format!("adapter error for {key}: {message}")));
        }
        let count_text = header.strip_prefix("PARENTS ").ok_or_else(|| {
            OracleError::ProtocolViolation(format!("expected PARENTS or ERR, got {header:?}"))
        })?;
        let count: usize = count_text.trim().parse().map_err(|_| {
            OracleError::ProtocolViolation(format!("bad parent count {count_text:?}"))
        })?;
        let mut parents = Vec::with_capacity(count);
        for _ in 0..count {
            let line = read_line(&mut proc, deadline, key, self.timeout.as_secs())?;
            parents.push(parse_parent_line(&line)?);
        }
        Ok(parents)
    }
}

fn read_line(
    proc: &mut AdapterProcess,
    deadline: Instant,
    key: &NodeKey,
    timeout_secs: u64,
) -> Result<String, OracleError> {
    let remaining = deadline.saturating_duration_since(Instant::now());
    match proc.lines.recv_timeout(remaining) {
        Ok(Ok(line)) => Ok(line),
        Ok(Err(e)) => Err(OracleError::Io(e.to_string())),
        Err(RecvTimeoutError::Timeout) => {
            Err(OracleError::Timeout { key: key.clone(), seconds: timeout_secs })
        }
        Err(RecvTimeoutError::Disconnected) => Err(OracleError::ProtocolViolation(
            "adapter closed its output stream".to_string(),
        )),
    }
}

fn parse_parent_line(line: &str) -> Result<SignalEvent, OracleError> {
    let mut parts = line.split_whitespace();
    let bad = || OracleError::ProtocolViolation(format!("bad parent line {line:?}"));
    let signal = parts.next().ok_or_else(bad)?;
    let cycle: u64 = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
    let value = parts.next().ok_or_else(bad)?;
    if parts.next().is_some() {
        return Err(bad());
    }
    Ok(SignalEvent::new(signal, cycle, value))
}

impl CausalityOracle for AdapterOracle {
    fn parents_of(&self, key: &NodeKey) -> Result<Vec<SignalEvent>, OracleError> {
        if let Some(hit) = self.cache.lock().expect("cache lock never poisoned").get(key) {
            return Ok(hit.clone());
        }
        let parents = self.query(key)?;
        self.cache
            .lock()
            .expect("cache lock never poisoned")
            .insert(key.clone(), parents.clone());
        Ok(parents)
    }
}

impl Drop for AdapterOracle {
    fn drop(&mut self) {
        if let Ok(mut proc) = self.inner.lock() {
            let _ = proc.child.kill();
            let _ = proc.child.wait();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_splitting_respects_quotes() {
        assert_eq!(split_command("a b c").unwrap(), ["a", "b", "c"]);
        assert_eq!(split_command("tool 'my dump.json'").unwrap(), ["tool", "my dump.json"]);
        assert_eq!(split_command("tool \"x y\" z").unwrap(), ["tool", "x y", "z"]);
        assert_eq!(split_command("  spaced   out  ").unwrap(), ["spaced", "out"]);
        assert!(split_command("tool 'open").is_err());
    }

    #[test]
    fn parent_lines_parse_strictly() {
        assert_eq!(
            parse_parent_line("valid_out 1 1'b0").unwrap(),
            SignalEvent::new("valid_out", 1, "1'b0")
        );
        assert!(parse_parent_line("only_two 7").is_err());
        assert!(parse_parent_line("a b c d").is_err());
        assert!(parse_parent_line("sig notanumber 1'b0").is_err());
    }

    #[test]
    fn spawn_failure_is_reported() {
        let err = match adapter_oracle("/nonexistent/bin", Duration::from_secs(1)) {
            Ok(_) => panic!("spawn unexpectedly succeeded"),
            Err(err) => err,
        };
        assert!(matches!(err, OracleError::ProcessSpawnFailure { .. }));
    }
}
