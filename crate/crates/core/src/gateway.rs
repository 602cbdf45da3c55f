//! LLM gateway.
//!
//! Every model call in the pipeline goes through one gateway, which enforces
//! the prompt token budget, counts calls, and supports three backends: a
//! live HTTP provider, a scripted responder (tests, cassette recording), and
//! cassette replay for fully offline runs. Cassettes are ordered transcripts
//! of `(tag, prompt digest, response)` records; replay consumes them in
//! order per tag, so a replayed run is byte-for-byte reproducible.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use crate::hash::fnv1a64_hex;

/// Environment variable holding the provider credential for live calls.
pub const API_KEY_ENV: &str = "CEXROOT_LLM_KEY";

pub const DEFAULT_PROMPT_BUDGET: usize = 50_000;
pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 4_096;
pub const DEFAULT_TRANSPORT_RETRIES: u32 = 3;
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("Prompt of {tokens} tokens exceeds the budget of {budget}")]
    BudgetExceeded { tokens: usize, budget: usize },
    #[error("Invalid generation request: {0}")]
    InvalidRequest(String),
    #[error("Cassette has no remaining record for tag {tag:?}")]
    ReplayExhausted { tag: String },
    #[error("Cassette digest mismatch for tag {tag:?}: recorded {recorded}, prompt hashes to {actual}")]
    ReplayMismatch { tag: String, recorded: String, actual: String },
    #[error("Malformed cassette at line {line}: {message}")]
    CassetteFormat { line: usize, message: String },
    #[error("Cassette I/O failure for {path}: {message}")]
    CassetteIo { path: String, message: String },
    #[error("Missing credential: set {API_KEY_ENV} for live generation")]
    MissingCredential,
    #[error("Transport failed after {attempts} attempts: {message}")]
    TransportFailure { attempts: u32, message: String },
}

/// Counts prompt tokens. The default estimator never needs a tokenizer
/// vocabulary: one token per four bytes, rounded up. Estimates are
/// subadditive under concatenation, so batch size search can rely on
/// per-part counts as an upper bound.
pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

/// `ceil(byte_length / 4)` estimator.
#[derive(Debug, Default, Clone, Copy)]
pub struct ByteHeuristicCounter;

impl TokenCounter for ByteHeuristicCounter {
    fn count(&self, text: &str) -> usize {
        text.len().div_ceil(4)
    }
}

/// One model call.
#[derive(Debug, Clone)]
pub struct GenerationRequest {
    /// Stage label; cassette replay consumes records per tag, in order.
    pub tag: String,
    pub prompt: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl GenerationRequest {
    pub fn new(tag: impl Into<String>, prompt: impl Into<String>) -> Self {
        Self {
            tag: tag.into(),
            prompt: prompt.into(),
            temperature: 0.0,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
        }
    }
}

/// Stable digest of a prompt, as stored in cassette records.
pub fn prompt_digest(prompt: &str) -> String {
    fnv1a64_hex(prompt.as_bytes())
}

/// One recorded exchange.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CassetteRecord {
    pub tag: String,
    /// `None` acts as a wildcard: hand-written fixtures use it to skip
    /// digest checking even in strict mode.
    pub digest: Option<String>,
    pub response: String,
}

/// An ordered transcript of model exchanges.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Cassette {
    records: Vec<CassetteRecord>,
}

impl Cassette {
    pub fn from_records(records: Vec<CassetteRecord>) -> Self {
        Self { records }
    }

    pub fn records(&self) -> &[CassetteRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path).map_err(|e| GatewayError::CassetteIo {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), GatewayError> {
        std::fs::write(path, self.serialize()).map_err(|e| GatewayError::CassetteIo {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    /// Parses the cassette text format:
    ///
    /// ```text
    /// === record tag=<tag> digest=<16 hex|*> [len=<bytes>]
    /// <response body>
    /// === end
    /// ```
    ///
    /// With `len`, the body is exactly that many bytes after the header
    /// line; without it, body lines run until the `=== end` line. Blank
    /// lines and `#` comments may appear between records.
    pub fn parse(text: &str) -> Result<Self, GatewayError> {
        let mut records = Vec::new();
        let mut pos = 0usize;
        let mut line_no = 0usize;
        while pos < text.len() {
            let eol = text[pos..].find('\n').map(|i| pos + i).unwrap_or(text.len());
            let line = &text[pos..eol];
            line_no += 1;
            let after_line = (eol + 1).min(text.len());
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                pos = after_line;
                continue;
            }
            let header_line = line_no;
            let attrs = trimmed.strip_prefix("=== record").ok_or(GatewayError::CassetteFormat {
                line: header_line,
                message: format!("expected '=== record', got {trimmed:?}"),
            })?;
            let (tag, digest, len) = parse_record_attrs(attrs, header_line)?;
            pos = after_line;
            let response = match len {
                Some(len) => {
                    if pos + len > text.len() {
                        return Err(GatewayError::CassetteFormat {
                            line: header_line,
                            message: format!("body length {len} exceeds remaining input"),
                        });
                    }
                    if !text.is_char_boundary(pos + len) {
                        return Err(GatewayError::CassetteFormat {
                            line: header_line,
                            message: format!("body length {len} splits a UTF-8 character"),
                        });
                    }
                    let body = &text[pos..pos + len];
                    line_no += body.matches('\n').count();
                    pos += len;
                    // One newline separates the body from the terminator.
                    if text[pos..].starts_with('\n') {
                        pos += 1;
                        line_no += 1;
                    }
                    let term_eol = text[pos..].find('\n').map(|i| pos + i).unwrap_or(text.len());
                    if text[pos..term_eol].trim() != "=== end" {
                        return Err(GatewayError::CassetteFormat {
                            line: line_no,
                            message: "missing '=== end' after sized body".to_string(),
                        });
                    }
                    line_no += 1;
                    pos = (term_eol + 1).min(text.len());
                    body.to_string()
                }
                None => {
                    let mut body_lines: Vec<&str> = Vec::new();
                    let mut closed = false;
                    while pos < text.len() {
                        let eol = text[pos..].find('\n').map(|i| pos + i).unwrap_or(text.len());
                        let body_line = &text[pos..eol];
                        line_no += 1;
                        pos = (eol + 1).min(text.len());
                        if body_line.trim() == "=== end" {
                            closed = true;
                            break;
                        }
                        body_lines.push(body_line);
                    }
                    if !closed {
                        return Err(GatewayError::CassetteFormat {
                            line: header_line,
                            message: "record never closed with '=== end'".to_string(),
                        });
                    }
                    body_lines.join("\n")
                }
            };
            records.push(CassetteRecord { tag, digest, response });
        }
        Ok(Self { records })
    }

    /// Writes the sized form, which round-trips any body byte-for-byte.
    pub fn serialize(&self) -> String {
        let mut out = String::from("# cexroot cassette v1\n");
        for record in &self.records {
            let digest = record.digest.as_deref().unwrap_or("*");
            out.push_str(&format!(
                "=== record tag={} digest={} len={}\n",
                record.tag,
                digest,
                record.response.len()
            ));
            out.push_str(&record.response);
            out.push_str("\n=== end\n");
        }
        out
    }
}

fn parse_record_attrs(
    attrs: &str,
    line: usize,
) -> Result<(String, Option<String>, Option<usize>), GatewayError> {
    let mut tag = None;
    let mut digest = None;
    let mut len = None;
    for part in attrs.split_whitespace() {
        let (key, value) = part.split_once('=').ok_or(GatewayError::CassetteFormat {
            line,
            message: format!("bad attribute {part:?}"),
        })?;
        match key {
            "tag" => tag = Some(value.to_string()),
            "digest" => {
                digest = if value == "*" { None } else { Some(value.to_string()) };
                if let Some(d) = &digest {
                    if d.len() != 16 || !d.bytes().all(|b| b.is_ascii_hexdigit()) {
                        return Err(GatewayError::CassetteFormat {
                            line,
                            message: format!("digest {d:?} is not 16 hex digits or '*'"),
                        });
                    }
                }
            }
            "len" => {
                len = Some(value.parse().map_err(|_| GatewayError::CassetteFormat {
                    line,
                    message: format!("bad len {value:?}"),
                })?)
            }
            other => {
                return Err(GatewayError::CassetteFormat {
                    line,
                    message: format!("unknown attribute {other:?}"),
                })
            }
        }
    }
    let tag = tag.ok_or(GatewayError::CassetteFormat {
        line,
        message: "record is missing tag=".to_string(),
    })?;
    Ok((tag, digest, len))
}

/// Gateway policy knobs.
#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub max_prompt_tokens: usize,
    /// In strict replay, a recorded digest must match the issued prompt.
    pub strict_replay: bool,
    pub transport_retries: u32,
    /// Upper bound on concurrently issued requests. The gateway itself
    /// serializes calls; callers running worker pools respect this cap.
    pub max_in_flight: usize,
    pub endpoint: String,
    pub model: String,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            max_prompt_tokens: DEFAULT_PROMPT_BUDGET,
            strict_replay: true,
            transport_retries: DEFAULT_TRANSPORT_RETRIES,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            endpoint: "https://api.openai.com/v1/chat/completions".to_string(),
            model: "gpt-4o".to_string(),
        }
    }
}

type ScriptFn = dyn Fn(&GenerationRequest) -> Result<String, GatewayError> + Send + Sync;

enum Backend {
    Replay(Mutex<ReplayState>),
    Scripted(Box<ScriptFn>),
    Live(LiveState),
}

struct ReplayState {
    records: Vec<CassetteRecord>,
    queues: BTreeMap<String, VecDeque<usize>>,
}

struct LiveState {
    client: reqwest::blocking::Client,
}

/// The single entry point for model calls.
pub struct LlmGateway {
    backend: Backend,
    config: GatewayConfig,
    counter: Box<dyn TokenCounter>,
    calls: AtomicU64,
    recorder: Option<Mutex<Vec<CassetteRecord>>>,
}

impl LlmGateway {
    pub fn replay(cassette: Cassette, config: GatewayConfig) -> Self {
        let mut queues: BTreeMap<String, VecDeque<usize>> = BTreeMap::new();
        for (idx, record) in cassette.records.iter().enumerate() {
            queues.entry(record.tag.clone()).or_default().push_back(idx);
        }
        Self::with_backend(
            Backend::Replay(Mutex::new(ReplayState { records: cassette.records, queues })),
            config,
        )
    }

    pub fn scripted<F>(script: F, config: GatewayConfig) -> Self
    where
        F: Fn(&GenerationRequest) -> Result<String, GatewayError> + Send + Sync + 'static,
    {
        Self::with_backend(Backend::Scripted(Box::new(script)), config)
    }

    pub fn live(config: GatewayConfig) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .expect("default TLS client always builds");
        Self::with_backend(Backend::Live(LiveState { client }), config)
    }

    fn with_backend(backend: Backend, config: GatewayConfig) -> Self {
        Self {
            backend,
            config,
            counter: Box::new(ByteHeuristicCounter),
            calls: AtomicU64::new(0),
            recorder: None,
        }
    }

    pub fn with_counter(mut self, counter: Box<dyn TokenCounter>) -> Self {
        self.counter = counter;
        self
    }

    /// Start keeping records of every successful exchange, for later saving
    /// as a cassette.
    pub fn with_recording(mut self) -> Self {
        self.recorder = Some(Mutex::new(Vec::new()));
        self
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn count_tokens(&self, text: &str) -> usize {
        self.counter.count(text)
    }

    pub fn fits_budget(&self, prompt: &str) -> bool {
        self.count_tokens(prompt) <= self.config.max_prompt_tokens
    }

    /// Successful generations issued so far.
    pub fn calls_issued(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    /// Records captured so far when recording is on.
    pub fn recorded(&self) -> Cassette {
        let records = self
            .recorder
            .as_ref()
            .map(|r| r.lock().expect("recorder lock never poisoned").clone())
            .unwrap_or_default();
        Cassette::from_records(records)
    }

    /// Issues one model call. The token budget is enforced before any
    /// transport or replay activity.
    pub fn generate(&self, request: &GenerationRequest) -> Result<String, GatewayError> {
        if request.prompt.is_empty() {
            return Err(GatewayError::InvalidRequest("empty prompt".to_string()));
        }
        if !(0.0..=2.0).contains(&request.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                request.temperature
            )));
        }
        let tokens = self.counter.count(&request.prompt);
        if tokens > self.config.max_prompt_tokens {
            return Err(GatewayError::BudgetExceeded {
                tokens,
                budget: self.config.max_prompt_tokens,
            });
        }
        let response = match &self.backend {
            Backend::Replay(state) => self.replay_one(state, request)?,
            Backend::Scripted(script) => script(request)?,
            Backend::Live(live) => self.live_one(live, request)?,
        };
        if let Some(recorder) = &self.recorder {
            recorder.lock().expect("recorder lock never poisoned").push(CassetteRecord {
                tag: request.tag.clone(),
                digest: Some(prompt_digest(&request.prompt)),
                response: response.clone(),
            });
        }
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(response)
    }

    fn replay_one(
        &self,
        state: &Mutex<ReplayState>,
        request: &GenerationRequest,
    ) -> Result<String, GatewayError> {
        let mut state = state.lock().expect("replay lock never poisoned");
        let idx = state
            .queues
            .get_mut(&request.tag)
            .and_then(VecDeque::pop_front)
            .ok_or_else(|| GatewayError::ReplayExhausted { tag: request.tag.clone() })?;
        let record = &state.records[idx];
        if self.config.strict_replay {
            if let Some(recorded) = &record.digest {
                let actual = prompt_digest(&request.prompt);
                if recorded != &actual {
                    return Err(GatewayError::ReplayMismatch {
                        tag: request.tag.clone(),
                        recorded: recorded.clone(),
                        actual,
                    });
                }
            }
        }
        Ok(record.response.clone())
    }

    fn live_one(
        &self,
        live: &LiveState,
        request: &GenerationRequest,
    ) -> Result<String, GatewayError> {
        let key = std::env::var(API_KEY_ENV).map_err(|_| GatewayError::MissingCredential)?;
        let body = serde_json::json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });
        let attempts = self.config.transport_retries.max(1);
        let mut last_error = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(100 << (attempt - 1)));
            }
            let sent = live
                .client
                .post(&self.config.endpoint)
                .bearer_auth(&key)
                .json(&body)
                .send();
            match sent {
                Ok(response) if response.status().is_success() => {
                    let value: serde_json::Value = response
                        .json()
                        .map_err(|e| GatewayError::TransportFailure {
                            attempts: attempt + 1,
                            message: format!("bad response body: {e}"),
                        })?;
                    let text = value
                        .pointer("/choices/0/message/content")
                        .and_then(|v| v.as_str())
                        .ok_or_else(|| GatewayError::TransportFailure {
                            attempts: attempt + 1,
                            message: "response carries no message content".to_string(),
                        })?;
                    return Ok(text.to_string());
                }
                Ok(response) => {
                    last_error = format!("provider returned HTTP {}", response.status());
                }
                Err(e) => last_error = e.to_string(),
            }
        }
        Err(GatewayError::TransportFailure { attempts, message: last_error })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(tag: &str, digest: Option<&str>, response: &str) -> CassetteRecord {
        CassetteRecord {
            tag: tag.to_string(),
            digest: digest.map(String::from),
            response: response.to_string(),
        }
    }

    #[test]
    fn byte_counter_rounds_up() {
        let c = ByteHeuristicCounter;
        assert_eq!(c.count(""), 0);
        assert_eq!(c.count("abc"), 1);
        assert_eq!(c.count("abcd"), 1);
        assert_eq!(c.count("abcde"), 2);
        assert_eq!(c.count(&"x".repeat(50_000 * 4)), 50_000);
    }

    #[test]
    fn byte_counter_is_subadditive() {
        let c = ByteHeuristicCounter;
        for (a, b) in [("", ""), ("ab", "cde"), ("xxxx", "yyyy"), ("q", "rstuvwx")] {
            let joined = format!("{a}{b}");
            assert!(c.count(&joined) <= c.count(a) + c.count(b) + 1);
        }
    }

    #[test]
    fn cassette_round_trips_sized_bodies() {
        let cassette = Cassette::from_records(vec![
            record("scan", Some("0123456789abcdef"), "{\n  \"ok\": true\n}"),
            record("scan", None, "line one\nline two"),
            record("fix.best_of", None, "contains\n=== end\ninside"),
        ]);
        let text = cassette.serialize();
        let back = Cassette::parse(&text).unwrap();
        assert_eq!(back, cassette);
    }

    #[test]
    fn cassette_parses_hand_written_line_form() {
        let text = "\
# a comment

=== record tag=scan digest=*
{\"n1\": {\"is_suspicious\": false}}
=== end

=== record tag=rover.seed digest=*
first line
second line
=== end
";
        let cassette = Cassette::parse(text).unwrap();
        assert_eq!(cassette.len(), 2);
        assert_eq!(cassette.records()[0].tag, "scan");
        assert_eq!(cassette.records()[0].digest, None);
        assert_eq!(cassette.records()[1].response, "first line\nsecond line");
    }

    #[test]
    fn cassette_rejects_malformed_input() {
        assert!(matches!(
            Cassette::parse("=== record tag=scan digest=xyz\nbody\n=== end\n"),
            Err(GatewayError::CassetteFormat { .. })
        ));
        assert!(matches!(
            Cassette::parse("=== record tag=scan digest=*\nnever closed\n"),
            Err(GatewayError::CassetteFormat { .. })
        ));
        assert!(matches!(
            Cassette::parse("not a record\n"),
            Err(GatewayError::CassetteFormat { .. })
        ));
        assert!(matches!(
            Cassette::parse("=== record digest=*\nbody\n=== end\n"),
            Err(GatewayError::CassetteFormat { .. })
        ));
    }

    #[test]
    fn replay_consumes_records_in_order_per_tag() {
        let cassette = Cassette::from_records(vec![
            record("a", None, "a-first"),
            record("b", None, "b-first"),
            record("a", None, "a-second"),
        ]);
        let gw = LlmGateway::replay(cassette, GatewayConfig::default());
        let req = |tag: &str| GenerationRequest::new(tag, "prompt");
        assert_eq!(gw.generate(&req("a")).unwrap(), "a-first");
        assert_eq!(gw.generate(&req("b")).unwrap(), "b-first");
        assert_eq!(gw.generate(&req("a")).unwrap(), "a-second");
        assert!(matches!(
            gw.generate(&req("a")),
            Err(GatewayError::ReplayExhausted { tag }) if tag == "a"
        ));
        assert_eq!(gw.calls_issued(), 3);
    }

    #[test]
    fn strict_replay_checks_digests() {
        let prompt = "the exact prompt";
        let cassette = Cassette::from_records(vec![
            record("t", Some(&prompt_digest(prompt)), "ok"),
            record("t", Some(&prompt_digest(prompt)), "ok2"),
        ]);
        let gw = LlmGateway::replay(cassette.clone(), GatewayConfig::default());
        assert_eq!(gw.generate(&GenerationRequest::new("t", prompt)).unwrap(), "ok");
        let err = gw.generate(&GenerationRequest::new("t", "a different prompt")).unwrap_err();
        assert!(matches!(err, GatewayError::ReplayMismatch { .. }), "{err:?}");

        let lax = GatewayConfig { strict_replay: false, ..GatewayConfig::default() };
        let gw = LlmGateway::replay(cassette, lax);
        assert_eq!(gw.generate(&GenerationRequest::new("t", "whatever")).unwrap(), "ok");
    }

    #[test]
    fn budget_is_enforced_before_any_transport() {
        // Token count 3 > budget 2; the scripted backend must never run.
        let config = GatewayConfig { max_prompt_tokens: 2, ..GatewayConfig::default() };
        let gw = LlmGateway::scripted(|_| panic!("transport must not be reached"), config);
        let err = gw.generate(&GenerationRequest::new("t", "twelve bytes")).unwrap_err();
        assert!(matches!(err, GatewayError::BudgetExceeded { tokens: 3, budget: 2 }), "{err:?}");
        assert_eq!(gw.calls_issued(), 0);
    }

    #[test]
    fn invalid_requests_are_rejected() {
        let gw = LlmGateway::scripted(|_| Ok("ok".into()), GatewayConfig::default());
        assert!(gw.generate(&GenerationRequest::new("t", "")).is_err());
        let mut req = GenerationRequest::new("t", "fine");
        req.temperature = 3.0;
        assert!(gw.generate(&req).is_err());
    }

    #[test]
    fn recording_captures_digests_and_replays_back() {
        let gw = LlmGateway::scripted(
            |req| Ok(format!("echo:{}", req.prompt)),
            GatewayConfig::default(),
        )
        .with_recording();
        gw.generate(&GenerationRequest::new("x", "one")).unwrap();
        gw.generate(&GenerationRequest::new("x", "two")).unwrap();
        let cassette = gw.recorded();
        assert_eq!(cassette.len(), 2);
        assert_eq!(cassette.records()[0].digest, Some(prompt_digest("one")));

        let replayed = LlmGateway::replay(cassette, GatewayConfig::default());
        assert_eq!(replayed.generate(&GenerationRequest::new("x", "one")).unwrap(), "echo:one");
        assert_eq!(replayed.generate(&GenerationRequest::new("x", "two")).unwrap(), "echo:two");
    }

    #[test]
    fn live_without_credential_fails_cleanly() {
        // The variable is absent in the test environment.
        std::env::remove_var(API_KEY_ENV);
        let gw = LlmGateway::live(GatewayConfig::default());
        let err = gw.generate(&GenerationRequest::new("t", "prompt")).unwrap_err();
        assert!(matches!(err, GatewayError::MissingCredential));
    }
}
