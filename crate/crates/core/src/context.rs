//! Per-signal context retrieval.
//!
//! Before any prompt is built, the pipeline prefetches everything it might
//! cite: RTL lines mentioning each signal and specification passages whose
//! wording resembles the signal name. The result is an immutable cache;
//! lookups after prefetch never touch the filesystem, so prompt construction
//! stays pure and replayable.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ContextError {
    #[error("Failed to read {path}: {message}")]
    Io { path: String, message: String },
}

/// RTL source tree held in memory, keyed by path relative to its root.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RtlCodeMap {
    files: BTreeMap<String, String>,
}

impl RtlCodeMap {
    /// Reads every UTF-8 file under `root`. Files that are not valid UTF-8
    /// are skipped; HDL sources always are.
    pub fn load(root: &Path) -> Result<Self, ContextError> {
        let mut files = BTreeMap::new();
        for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
            let entry = entry.map_err(|e| ContextError::Io {
                path: root.display().to_string(),
                message: e.to_string(),
            })?;
            if !entry.file_type().is_file() {
                continue;
            }
            let bytes = std::fs::read(entry.path()).map_err(|e| ContextError::Io {
                path: entry.path().display().to_string(),
                message: e.to_string(),
            })?;
            let Ok(text) = String::from_utf8(bytes) else { continue };
            let rel = entry
                .path()
                .strip_prefix(root)
                .expect("walked paths live under the root")
                .to_string_lossy()
                .replace('\\', "/");
            files.insert(rel, text);
        }
        Ok(Self { files })
    }

    pub fn from_files(files: impl IntoIterator<Item = (String, String)>) -> Self {
        Self { files: files.into_iter().collect() }
    }

    pub fn files(&self) -> impl Iterator<Item = (&str, &str)> {
        self.files.iter().map(|(p, t)| (p.as_str(), t.as_str()))
    }

    pub fn get(&self, path: &str) -> Option<&str> {
        self.files.get(path).map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    /// 1-based line number containing `offset` in `path`.
    pub fn line_of_offset(&self, path: &str, offset: usize) -> Option<usize> {
        let text = self.get(path)?;
        if offset > text.len() {
            return None;
        }
        Some(text[..offset].bytes().filter(|&b| b == b'\n').count() + 1)
    }
}

/// A contiguous stretch of RTL around occurrences of a signal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RtlSnippet {
    pub path: String,
    /// 1-based, inclusive.
    pub start_line: usize,
    pub end_line: usize,
    pub text: String,
}

/// A specification passage with its match score against a signal name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecExcerpt {
    pub doc_id: String,
    pub text: String,
    pub score: f64,
}

/// Everything retrieved for one signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalContext {
    pub signal: String,
    pub rtl_snippets: Vec<RtlSnippet>,
    pub spec_excerpts: Vec<SpecExcerpt>,
    /// Logical retrieval stamp: position in prefetch order. Later prefetches
    /// of other signals always carry larger stamps.
    pub retrieved_at: u64,
}

impl SignalContext {
    pub fn empty(signal: &str, retrieved_at: u64) -> Self {
        Self {
            signal: signal.to_string(),
            rtl_snippets: Vec::new(),
            spec_excerpts: Vec::new(),
            retrieved_at,
        }
    }

    pub fn has_rtl(&self) -> bool {
        !self.rtl_snippets.is_empty()
    }
}

/// Immutable retrieval cache for one analysis run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContextCache {
    entries: BTreeMap<String, SignalContext>,
    global: Vec<SpecExcerpt>,
    threshold: f64,
}

impl ContextCache {
    /// Cached context for `signal`, or an empty context when the signal was
    /// never prefetched. Never performs I/O.
    pub fn lookup(&self, signal: &str) -> SignalContext {
        self.entries
            .get(signal)
            .cloned()
            .unwrap_or_else(|| SignalContext::empty(signal, self.entries.len() as u64))
    }

    pub fn contains(&self, signal: &str) -> bool {
        self.entries.contains_key(signal)
    }

    /// Design-wide excerpts: the leading passage of every specification
    /// document, independent of any signal.
    pub fn global_excerpts(&self) -> &[SpecExcerpt] {
        &self.global
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn signals(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

/// Prefetches context for every signal in `signals`.
///
/// RTL retrieval takes each line where the signal's leaf token occurs as an
/// identifier, widens it by three lines of context on both sides, and merges
/// overlapping windows. Spec retrieval keeps passages whose fuzzy score
/// against the signal name reaches `threshold`.
pub fn prefetch(
    signals: &[String],
    rtl: &RtlCodeMap,
    spec_docs: &BTreeMap<String, String>,
    threshold: f64,
) -> ContextCache {
    let paragraphs: Vec<(String, Vec<String>)> = spec_docs
        .iter()
        .map(|(doc_id, text)| (doc_id.clone(), split_paragraphs(text)))
        .collect();

    let mut entries = BTreeMap::new();
    let mut stamp = 0u64;
    for signal in signals {
        if entries.contains_key(signal) {
            continue;
        }
        let token = leaf_token(signal);
        let mut rtl_snippets = Vec::new();
        for (path, text) in rtl.files() {
            rtl_snippets.extend(snippets_for(path, text, &token));
        }
        let mut spec_excerpts = Vec::new();
        for (doc_id, paras) in &paragraphs {
            for (idx, para) in paras.iter().enumerate() {
                let score = fuzzy_match(signal, para);
                if score >= threshold {
                    spec_excerpts.push((idx, SpecExcerpt {
                        doc_id: doc_id.clone(),
                        text: para.clone(),
                        score,
                    }));
                }
            }
        }
        spec_excerpts.sort_by(|(ai, a), (bi, b)| {
            b.score
                .partial_cmp(&a.score)
                .expect("fuzzy scores are finite")
                .then_with(|| a.doc_id.cmp(&b.doc_id))
                .then_with(|| ai.cmp(bi))
        });
        let spec_excerpts = spec_excerpts.into_iter().map(|(_, e)| e).collect();
        entries.insert(
            signal.clone(),
            SignalContext { signal: signal.clone(), rtl_snippets, spec_excerpts, retrieved_at: stamp },
        );
        stamp += 1;
    }

    let global = paragraphs
        .iter()
        .filter_map(|(doc_id, paras)| {
            paras.first().map(|p| SpecExcerpt { doc_id: doc_id.clone(), text: p.clone(), score: 1.0 })
        })
        .collect();

    ContextCache { entries, global, threshold }
}

/// Loads a directory of plain-text or markdown specification documents.
pub fn load_spec_docs(root: &Path) -> Result<BTreeMap<String, String>, ContextError> {
    let map = RtlCodeMap::load(root)?;
    Ok(map.files.into_iter().collect())
}

fn split_paragraphs(text: &str) -> Vec<String> {
    let mut paras = Vec::new();
    let mut current = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                paras.push(current.join("\n"));
                current.clear();
            }
        } else {
            current.push(line.trim_end());
        }
    }
    if !current.is_empty() {
        paras.push(current.join("\n"));
    }
    paras
}

/// Last path component of a hierarchical signal, bit selects stripped:
/// `i_mmu.lsu_req_i` and `data_q[7]` both reduce to their leaf identifier.
pub fn leaf_token(signal: &str) -> String {
    let leaf = signal.rsplit('.').next().unwrap_or(signal);
    let leaf = leaf.split('[').next().unwrap_or(leaf);
    leaf.to_string()
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '$'
}

/// True when `line` contains `token` delimited by non-identifier characters.
fn line_mentions(line: &str, token: &str) -> bool {
    if token.is_empty() {
        return false;
    }
    let mut start = 0;
    while let Some(pos) = line[start..].find(token) {
        let at = start + pos;
        let before_ok = at == 0 || !is_ident_char(line[..at].chars().next_back().unwrap());
        let after = at + token.len();
        let after_ok = after >= line.len() || !is_ident_char(line[after..].chars().next().unwrap());
        if before_ok && after_ok {
            return true;
        }
        start = at + token.len().max(1);
    }
    false
}

const SNIPPET_MARGIN: usize = 3;

fn snippets_for(path: &str, text: &str, token: &str) -> Vec<RtlSnippet> {
    let lines: Vec<&str> = text.lines().collect();
    let mut ranges: Vec<(usize, usize)> = Vec::new();
    for (idx, line) in lines.iter().enumerate() {
        if line_mentions(line, token) {
            let start = idx.saturating_sub(SNIPPET_MARGIN);
            let end = (idx + SNIPPET_MARGIN).min(lines.len().saturating_sub(1));
            match ranges.last_mut() {
                Some((_, last_end)) if start <= *last_end + 1 => *last_end = (*last_end).max(end),
                _ => ranges.push((start, end)),
            }
        }
    }
    ranges
        .into_iter()
        .map(|(start, end)| RtlSnippet {
            path: path.to_string(),
            start_line: start + 1,
            end_line: end + 1,
            text: lines[start..=end].join("\n"),
        })
        .collect()
}

/// Similarity between a signal name and a phrase, in `[0, 1]`.
///
/// Both sides are canonicalized (lowercased, split into alphanumeric tokens,
/// token order normalized); equal canonical forms score 1.0. Otherwise each
/// token is paired with its closest counterpart by normalized edit distance
/// and the per-token similarities are averaged; the better direction wins,
/// which keeps the function symmetric.
pub fn fuzzy_match(a: &str, b: &str) -> f64 {
    let ta = tokens(a);
    let tb = tokens(b);
    match (ta.is_empty(), tb.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let mut sorted_a = ta.clone();
    let mut sorted_b = tb.clone();
    sorted_a.sort();
    sorted_b.sort();
    if sorted_a == sorted_b {
        return 1.0;
    }
    directional(&ta, &tb).max(directional(&tb, &ta))
}

fn directional(from: &[String], to: &[String]) -> f64 {
    let total: f64 = from
        .iter()
        .map(|t| {
            to.iter()
                .map(|u| token_similarity(t, u))
                .fold(0.0f64, f64::max)
        })
        .sum();
    total / from.len() as f64
}

fn token_similarity(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 1.0;
    }
    1.0 - edit_distance(a, b) as f64 / longest as f64
}

fn tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_ascii_alphanumeric() {
            current.push(c.to_ascii_lowercase());
        } else if !current.is_empty() {
            out.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

/// Classic two-row Levenshtein distance over characters.
fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut next = vec![0usize; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        next[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let substitute = prev[j] + usize::from(ca != cb);
            next[j + 1] = substitute.min(prev[j + 1] + 1).min(next[j] + 1);
        }
        std::mem::swap(&mut prev, &mut next);
    }
    prev[b.len()]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edit_distance_basics() {
        assert_eq!(edit_distance("", ""), 0);
        assert_eq!(edit_distance("abc", ""), 3);
        assert_eq!(edit_distance("kitten", "sitting"), 3);
        assert_eq!(edit_distance("out", "output"), 3);
    }

    #[test]
    fn identical_and_reordered_names_score_one() {
        assert_eq!(fuzzy_match("valid_out", "valid_out"), 1.0);
        assert_eq!(fuzzy_match("valid_out", "valid out"), 1.0);
        assert_eq!(fuzzy_match("valid_out", "OUT_VALID"), 1.0);
    }

    #[test]
    fn related_phrases_clear_the_default_threshold() {
        let score = fuzzy_match("valid_out", "output valid signal");
        assert!(score >= 0.7, "score {score}");
        assert!((score - 0.75).abs() < 1e-12, "score {score}");
    }

    #[test]
    fn unrelated_text_scores_low() {
        let score = fuzzy_match("ready_add", "zzzz");
        assert!(score < 0.3, "score {score}");
    }

    #[test]
    fn fuzzy_match_is_symmetric() {
        let pairs = [
            ("valid_out", "output valid signal"),
            ("ready_add", "the adder is ready"),
            ("count", "counter value"),
            ("", "x"),
        ];
        for (a, b) in pairs {
            assert_eq!(fuzzy_match(a, b), fuzzy_match(b, a), "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn scores_stay_in_unit_interval() {
        for (a, b) in [("a", "zzzzzzzz"), ("sig_1", "sig_2"), ("x", "")] {
            let s = fuzzy_match(a, b);
            assert!((0.0..=1.0).contains(&s), "{a:?} vs {b:?} -> {s}");
        }
    }

    #[test]
    fn leaf_tokens_strip_hierarchy_and_selects() {
        assert_eq!(leaf_token("i_mmu.lsu_req_i"), "lsu_req_i");
        assert_eq!(leaf_token("data_q[7]"), "data_q");
        assert_eq!(leaf_token("top.u0.bus[3].ack"), "ack");
        assert_eq!(leaf_token("plain"), "plain");
    }

    #[test]
    fn token_matching_requires_identifier_boundaries() {
        assert!(line_mentions("assign ready_add = a;", "ready_add"));
        assert!(line_mentions("ready_add<=1'b0;", "ready_add"));
        assert!(!line_mentions("assign ready_adder = a;", "ready_add"));
        assert!(!line_mentions("assign my_ready_add = a;", "ready_add"));
    }

    fn sample_rtl() -> RtlCodeMap {
        let text = "\
module accu;
  wire ready_add;
  wire valid_in;
  wire valid_out;
  wire [1:0] count;

  assign ready_add = valid_out | !valid_in;

  // unrelated block
  always @(posedge clk) begin
    if (rst) count <= 2'b00;
  end
endmodule
";
        RtlCodeMap::from_files([("accu.sv".to_string(), text.to_string())])
    }

    #[test]
    fn snippets_merge_overlapping_windows() {
        let rtl = sample_rtl();
        let cache = prefetch(&["ready_add".to_string()], &rtl, &BTreeMap::new(), 0.7);
        let ctx = cache.lookup("ready_add");
        // Mentions on lines 2 and 7 produce windows 1..=5 and 4..=10,
        // which merge into a single snippet.
        assert_eq!(ctx.rtl_snippets.len(), 1);
        let snip = &ctx.rtl_snippets[0];
        assert_eq!((snip.start_line, snip.end_line), (1, 10));
        assert!(snip.text.contains("assign ready_add = valid_out | !valid_in;"));
    }

    #[test]
    fn missing_signal_gets_empty_context() {
        let rtl = sample_rtl();
        let cache = prefetch(&["ghost_signal".to_string()], &rtl, &BTreeMap::new(), 0.7);
        let ctx = cache.lookup("ghost_signal");
        assert!(!ctx.has_rtl());
        assert!(ctx.spec_excerpts.is_empty());
        // A signal never prefetched behaves the same.
        assert!(!cache.lookup("never_seen").has_rtl());
    }

    #[test]
    fn spec_excerpts_respect_threshold_monotonically() {
        let rtl = RtlCodeMap::default();
        let docs: BTreeMap<String, String> = [(
            "spec.md".to_string(),
            "The design overview.\n\nvalid_out is the output valid signal.\n\nThe counter wraps at three.".to_string(),
        )]
        .into();
        let signals = vec!["valid_out".to_string()];
        let low = prefetch(&signals, &rtl, &docs, 0.5);
        let high = prefetch(&signals, &rtl, &docs, 0.9);
        let low_set: Vec<String> =
            low.lookup("valid_out").spec_excerpts.iter().map(|e| e.text.clone()).collect();
        let high_set: Vec<String> =
            high.lookup("valid_out").spec_excerpts.iter().map(|e| e.text.clone()).collect();
        for text in &high_set {
            assert!(low_set.contains(text), "raising the threshold added {text:?}");
        }
        assert!(low_set.iter().any(|t| t.contains("output valid signal")));
    }

    #[test]
    fn global_excerpts_take_the_leading_passage() {
        let docs: BTreeMap<String, String> = [
            ("a.md".to_string(), "Accumulator overview.\n\nDetails.".to_string()),
            ("b.md".to_string(), "Interface notes.".to_string()),
        ]
        .into();
        let cache = prefetch(&[], &RtlCodeMap::default(), &docs, 0.7);
        let globals: Vec<&str> = cache.global_excerpts().iter().map(|e| e.text.as_str()).collect();
        assert_eq!(globals, ["Accumulator overview.", "Interface notes."]);
    }

    #[test]
    fn retrieval_stamps_follow_prefetch_order() {
        let rtl = sample_rtl();
        let signals = vec!["valid_in".to_string(), "valid_out".to_string(), "valid_in".to_string()];
        let cache = prefetch(&signals, &rtl, &BTreeMap::new(), 0.7);
        assert_eq!(cache.lookup("valid_in").retrieved_at, 0);
        assert_eq!(cache.lookup("valid_out").retrieved_at, 1);
    }
}
