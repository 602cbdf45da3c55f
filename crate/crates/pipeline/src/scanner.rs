//! Level-ordered graph scanning with token-budgeted batches.
//!
//! Nodes are analyzed level by level so deeper causes are judged before
//! their effects, and each level is consumed in maximal batches found by
//! binary search over the fully built prompt. Replies must carry balanced
//! for-and-against arguments per node; a failed parse gets one stricter
//! retry before the affected nodes are recorded as unanalyzed.

use std::collections::BTreeMap;

use cexroot_core::config::RunConfig;
use cexroot_core::context::ContextCache;
use cexroot_core::event::NodeKey;
use cexroot_core::gateway::{GatewayError, GenerationRequest, LlmGateway};
use cexroot_core::graph::{topological_levels, CausalGraph, GraphError};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::extract::extract_json;
use crate::prompts;

#[derive(Debug, thiserror::Error)]
pub enum ScanError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("context for {key} exceeds the prompt budget even when fully truncated")]
    SingleNodeOverBudget { key: NodeKey },
}

/// Why a node's reply entry was rejected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScanIssue {
    Unparseable,
    MissingAnalysis,
    SchemaViolation { field: String },
    MissingForAgainst,
}

impl std::fmt::Display for ScanIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ScanIssue::Unparseable => write!(f, "reply was not parseable"),
            ScanIssue::MissingAnalysis => write!(f, "node missing from reply"),
            ScanIssue::SchemaViolation { field } => write!(f, "schema violation in {field}"),
            ScanIssue::MissingForAgainst => {
                write!(f, "fewer than 2 bullets under a FOR/AGAINST section")
            }
        }
    }
}

/// Scanner verdict for one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeAnalysis {
    pub node_key: NodeKey,
    pub is_suspicious: bool,
    pub is_key_event: bool,
    pub suspicion_score: f64,
    pub importance_score: f64,
    pub causal_validity: BTreeMap<NodeKey, bool>,
    pub analysis_markdown: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    /// Suspicious node keys, descending score, ties by (cycle, signal).
    pub suspicious: Vec<NodeKey>,
    pub analyses: BTreeMap<NodeKey, NodeAnalysis>,
    /// Nodes whose replies stayed invalid after the retry.
    pub unanalyzed: Vec<NodeKey>,
    pub batches_issued: u64,
}

impl ScanResult {
    pub fn suspicion_of(&self, key: &NodeKey) -> f64 {
        self.analyses.get(key).map(|a| a.suspicion_score).unwrap_or(0.0)
    }
}

/// Batch sizing over an abstract fit predicate.
///
/// `fits(n)` must build the full prompt for the first `n` nodes and check it
/// against the budget. Probes the whole slice first, then `1`, then binary
/// search between them: at most ceil(log2(count)) + 2 constructions beyond
/// the initial whole-slice probe.
pub fn binary_search_max_batch<F>(count: usize, mut fits: F) -> Result<usize, SingleNodeOverBudget>
where
    F: FnMut(usize) -> bool,
{
    assert!(count >= 1, "batch search over an empty slice");
    if fits(count) {
        return Ok(count);
    }
    if !fits(1) {
        return Err(SingleNodeOverBudget);
    }
    // Invariant: lo fits, hi does not.
    let (mut lo, mut hi) = (1, count);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if fits(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SingleNodeOverBudget;

/// How much of each per-node context block to render.
#[derive(Debug, Clone, Copy)]
enum ContextBudget {
    Full,
    /// Truncate each block's RTL and spec text to this many characters.
    Truncated(usize),
}

fn node_id(i: usize) -> String {
    format!("n{}", i + 1)
}

/// Assembles the scanner prompt for one batch.
pub fn build_scan_prompt(
    batch: &[NodeKey],
    graph: &CausalGraph,
    cache: &ContextCache,
    scenario: &str,
    prior: &BTreeMap<NodeKey, NodeAnalysis>,
) -> String {
    build_prompt_inner(batch, graph, cache, scenario, prior, ContextBudget::Full)
}

fn build_prompt_inner(
    batch: &[NodeKey],
    graph: &CausalGraph,
    cache: &ContextCache,
    scenario: &str,
    prior: &BTreeMap<NodeKey, NodeAnalysis>,
    budget: ContextBudget,
) -> String {
    let mut out = String::new();
    let scenario = if scenario.trim().is_empty() { prompts::NONE_PROVIDED } else { scenario };
    out.push_str("### SCENARIO\n");
    out.push_str(scenario.trim());
    out.push_str("\n\n### GLOBAL CONTEXT AND INSIGHTS\n");
    out.push_str("The following high-level insights provide important context about the design:\n\n");

    out.push_str("#### Design Overview\n");
    if cache.global_excerpts().is_empty() {
        out.push_str(prompts::NONE_PROVIDED);
        out.push('\n');
    } else {
        for excerpt in cache.global_excerpts() {
            out.push_str(&format!("[{}] {}\n", excerpt.doc_id, excerpt.text));
        }
    }

    out.push_str("\n#### Specification Requirements\n");
    let mut requirements: Vec<String> = Vec::new();
    for key in batch {
        for excerpt in cache.lookup(&key.signal).spec_excerpts {
            let line = format!("[{}] {}", excerpt.doc_id, excerpt.text);
            if requirements.len() < 5 && !requirements.contains(&line) {
                requirements.push(line);
            }
        }
    }
    if requirements.is_empty() {
        out.push_str(prompts::NONE_PROVIDED);
        out.push('\n');
    } else {
        for line in &requirements {
            out.push_str(line);
            out.push('\n');
        }
    }

    out.push_str("\n### NODES TO ANALYZE\n");
    out.push_str("| node_id | signal | cycle | value |\n|---|---|---|---|\n");
    for (i, key) in batch.iter().enumerate() {
        let value = graph.value_of(key).unwrap_or("?");
        out.push_str(&format!("| {} | {} | {} | {} |\n", node_id(i), key.signal, key.cycle, value));
    }

    out.push_str("\n### SUBGRAPH EDGE LIST\n");
    let label = |key: &NodeKey| -> String {
        batch
            .iter()
            .position(|k| k == key)
            .map(node_id)
            .unwrap_or_else(|| key.to_string())
    };
    let mut any_edge = false;
    for (i, key) in batch.iter().enumerate() {
        for cause in graph.causes_of(key) {
            out.push_str(&format!("{} -> {}\n", label(cause), node_id(i)));
            any_edge = true;
        }
    }
    if !any_edge {
        out.push_str("(no edges into this batch)\n");
    }

    out.push_str("\n### NODE-SPECIFIC CONTEXT (RTL & SPEC)\n");
    for (i, key) in batch.iter().enumerate() {
        let value = graph.value_of(key).unwrap_or("?");
        out.push_str(&format!("#### CONTEXT {}\n", i + 1));
        out.push_str(&format!(
            "Node {}: {} at cycle {} = {}\n",
            node_id(i),
            key.signal,
            key.cycle,
            value
        ));
        let context = cache.lookup(&key.signal);
        out.push_str("RTL:\n");
        if context.rtl_snippets.is_empty() {
            out.push_str(prompts::RTL_MISSING);
            out.push('\n');
        } else {
            let mut rtl = String::new();
            for snippet in &context.rtl_snippets {
                rtl.push_str(&format!(
                    "// {}:{}-{}\n{}\n",
                    snippet.path, snippet.start_line, snippet.end_line, snippet.text
                ));
            }
            out.push_str(&clip(&rtl, budget));
        }
        out.push_str("Spec:\n");
        if context.spec_excerpts.is_empty() {
            out.push_str(prompts::NONE_PROVIDED);
            out.push('\n');
        } else {
            let mut spec = String::new();
            for excerpt in &context.spec_excerpts {
                spec.push_str(&format!("[{}] {}\n", excerpt.doc_id, excerpt.text));
            }
            out.push_str(&clip(&spec, budget));
        }
        out.push('\n');
    }

    let mut parent_lines: BTreeMap<&NodeKey, String> = BTreeMap::new();
    for key in batch {
        for cause in graph.causes_of(key) {
            if let Some(analysis) = prior.get(cause) {
                let verdict = if analysis.is_suspicious { "suspicious" } else { "benign" };
                parent_lines.entry(cause).or_insert_with(|| {
                    format!("- {}: {} (suspicion {:.2})\n", cause, verdict, analysis.suspicion_score)
                });
            }
        }
    }
    if !parent_lines.is_empty() {
        out.push_str("### PARENT ANALYSES\n");
        for line in parent_lines.values() {
            out.push_str(line);
        }
        out.push('\n');
    }

    out.push_str(prompts::SCAN_GUIDANCE);
    out.push('\n');
    out.push_str(prompts::SCAN_SCHEMA);
    out
}

fn clip(text: &str, budget: ContextBudget) -> String {
    match budget {
        ContextBudget::Full => text.to_string(),
        ContextBudget::Truncated(limit) => {
            if text.len() <= limit {
                return text.to_string();
            }
            let mut cut = limit;
            while cut > 0 && !text.is_char_boundary(cut) {
                cut -= 1;
            }
            format!("{}\n(context truncated to fit budget)\n", &text[..cut])
        }
    }
}

/// Parses a batch reply into per-node verdicts.
///
/// Always total over the batch: nodes the reply omits or botches carry a
/// `ScanIssue` instead of an analysis. `is_suspicious` is honored only when
/// the score clears `suspicion_floor`.
pub fn parse_scan_response(
    text: &str,
    batch: &[NodeKey],
    suspicion_floor: f64,
) -> BTreeMap<NodeKey, Result<NodeAnalysis, ScanIssue>> {
    let mut out = BTreeMap::new();
    let Some(root) = extract_json(text).filter(Value::is_object) else {
        for key in batch {
            out.insert(key.clone(), Err(ScanIssue::Unparseable));
        }
        return out;
    };
    for (i, key) in batch.iter().enumerate() {
        let entry = root
            .get(node_id(i))
            .or_else(|| root.get(key.to_string()))
            .ok_or(ScanIssue::MissingAnalysis)
            .and_then(|v| analysis_from_value(key, v, batch, suspicion_floor));
        out.insert(key.clone(), entry);
    }
    out
}

fn analysis_from_value(
    key: &NodeKey,
    value: &Value,
    batch: &[NodeKey],
    suspicion_floor: f64,
) -> Result<NodeAnalysis, ScanIssue> {
    let schema = |field: &str| ScanIssue::SchemaViolation { field: field.to_string() };
    let object = value.as_object().ok_or_else(|| schema("analysis entry"))?;

    let raw_suspicious =
        object.get("is_suspicious").and_then(Value::as_bool).ok_or_else(|| schema("is_suspicious"))?;
    let suspicion_score = object
        .get("suspicion_score")
        .and_then(Value::as_f64)
        .filter(|s| (0.0..=1.0).contains(s))
        .ok_or_else(|| schema("suspicion_score"))?;
    let is_key_event = match object.get("is_key_event") {
        None => false,
        Some(v) => v.as_bool().ok_or_else(|| schema("is_key_event"))?,
    };
    let importance_score = match object.get("importance_score") {
        None => 0.5,
        Some(v) => v
            .as_f64()
            .filter(|s| (0.0..=1.0).contains(s))
            .ok_or_else(|| schema("importance_score"))?,
    };

    let mut causal_validity = BTreeMap::new();
    if let Some(validity) = object.get("causal_validity") {
        let map = validity.as_object().ok_or_else(|| schema("causal_validity"))?;
        for (parent, flag) in map {
            let flag = flag.as_bool().ok_or_else(|| schema("causal_validity"))?;
            // Parents may be referenced by batch node_id or by full key;
            // anything else is model noise and dropped.
            let resolved = (0..batch.len())
                .find(|&i| node_id(i) == *parent)
                .map(|i| batch[i].clone())
                .or_else(|| parent.parse::<NodeKey>().ok());
            if let Some(parent_key) = resolved {
                causal_validity.insert(parent_key, flag);
            }
        }
    }

    let markdown = object
        .get("analysis")
        .and_then(Value::as_str)
        .ok_or_else(|| schema("analysis"))?
        .to_string();
    for header in ["Arguments FOR Being Suspicious", "Arguments AGAINST Being Suspicious"] {
        if bullets_under(&markdown, header) < 2 {
            return Err(ScanIssue::MissingForAgainst);
        }
    }

    Ok(NodeAnalysis {
        node_key: key.clone(),
        is_suspicious: raw_suspicious && suspicion_score >= suspicion_floor,
        is_key_event,
        suspicion_score,
        importance_score,
        causal_validity,
        analysis_markdown: markdown,
    })
}

/// Counts bullet lines under the heading whose text starts with `header`.
fn bullets_under(markdown: &str, header: &str) -> usize {
    let mut in_section = false;
    let mut count = 0;
    for line in markdown.lines() {
        let trimmed = line.trim_start();
        if let Some(heading) = trimmed.strip_prefix("## ") {
            in_section = heading.trim().starts_with(header);
            continue;
        }
        if in_section && (trimmed.starts_with("- ") || trimmed.starts_with("* ")) {
            count += 1;
        }
    }
    count
}

/// Runs the full scan over the graph.
pub fn scan(
    graph: &CausalGraph,
    cache: &ContextCache,
    gateway: &LlmGateway,
    config: &RunConfig,
    scenario: &str,
) -> Result<ScanResult, ScanError> {
    let levels = topological_levels(graph)?;
    let mut result = ScanResult {
        suspicious: Vec::new(),
        analyses: BTreeMap::new(),
        unanalyzed: Vec::new(),
        batches_issued: 0,
    };

    for level in &levels {
        let mut remaining: &[NodeKey] = level;
        while !remaining.is_empty() {
            let search = binary_search_max_batch(remaining.len(), |n| {
                let prompt = build_prompt_inner(
                    &remaining[..n],
                    graph,
                    cache,
                    scenario,
                    &result.analyses,
                    ContextBudget::Full,
                );
                gateway.fits_budget(&prompt)
            });
            let (batch_len, prompt) = match search {
                Ok(n) => {
                    let prompt = build_prompt_inner(
                        &remaining[..n],
                        graph,
                        cache,
                        scenario,
                        &result.analyses,
                        ContextBudget::Full,
                    );
                    (n, prompt)
                }
                Err(SingleNodeOverBudget) => {
                    // Oversized context: halve this node's context blocks
                    // until the single-node prompt fits.
                    let key = remaining[0].clone();
                    let context = cache.lookup(&key.signal);
                    let mut limit = context
                        .rtl_snippets
                        .iter()
                        .map(|s| s.text.len())
                        .chain(context.spec_excerpts.iter().map(|e| e.text.len()))
                        .sum::<usize>()
                        .max(2);
                    let prompt = loop {
                        limit /= 2;
                        let prompt = build_prompt_inner(
                            &remaining[..1],
                            graph,
                            cache,
                            scenario,
                            &result.analyses,
                            ContextBudget::Truncated(limit),
                        );
                        if gateway.fits_budget(&prompt) {
                            break prompt;
                        }
                        if limit == 0 {
                            return Err(ScanError::SingleNodeOverBudget { key });
                        }
                    };
                    (1, prompt)
                }
            };
            let batch = &remaining[..batch_len];
            result.batches_issued += 1;
            let tag = format!("scan.b{:03}", result.batches_issued);

            let reply = generate(gateway, config, &tag, &prompt)?;
            let mut parsed = parse_scan_response(&reply, batch, config.suspicion_floor);
            if parsed.values().any(Result::is_err) {
                let retry_tag = format!("{tag}.retry");
                let retry_prompt = format!("{prompt}{}", prompts::SCAN_RETRY_SUFFIX);
                let reply = generate(gateway, config, &retry_tag, &retry_prompt)?;
                let second = parse_scan_response(&reply, batch, config.suspicion_floor);
                for (key, entry) in second {
                    if matches!(parsed.get(&key), Some(Err(_))) && entry.is_ok() {
                        parsed.insert(key, entry);
                    }
                }
            }
            for key in batch {
                match parsed.remove(key).expect("parser is total over the batch") {
                    Ok(analysis) => {
                        result.analyses.insert(key.clone(), analysis);
                    }
                    Err(_) => result.unanalyzed.push(key.clone()),
                }
            }
            remaining = &remaining[batch_len..];
        }
    }

    let mut suspicious: Vec<NodeKey> = result
        .analyses
        .values()
        .filter(|a| a.is_suspicious)
        .map(|a| a.node_key.clone())
        .collect();
    suspicious.sort_by(|a, b| {
        let sa = result.suspicion_of(a);
        let sb = result.suspicion_of(b);
        sb.partial_cmp(&sa).unwrap_or(std::cmp::Ordering::Equal).then_with(|| a.cmp(b))
    });
    result.suspicious = suspicious;
    Ok(result)
}

fn generate(
    gateway: &LlmGateway,
    config: &RunConfig,
    tag: &str,
    prompt: &str,
) -> Result<String, GatewayError> {
    let mut request = GenerationRequest::new(tag, prompt);
    request.temperature = config.temperature;
    request.max_output_tokens = config.max_output_tokens;
    gateway.generate(&request)
}

#[cfg(test)]
mod tests {
    use super::*;
    use cexroot_core::context::prefetch;
    use cexroot_core::context::RtlCodeMap;
    use cexroot_core::gateway::GatewayConfig;
    use cexroot_core::graph::{build_trace_tree, consolidate};
    use cexroot_core::oracle::{dump_from_records, CausalityDump, DumpEvent};
    use serde_json::json;
    use std::sync::Mutex;

    fn markdown(for_bullets: usize, against_bullets: usize) -> String {
        let mut text = String::from("## Signal Behavior\nObserved value.\n\n## RTL Evidence\n- File: accu.sv:10\n\n");
        text.push_str("## Arguments FOR Being Suspicious (REQUIRED - MIN 2)\n");
        for i in 0..for_bullets {
            text.push_str(&format!("- concern {i}\n"));
        }
        text.push_str("\n## Arguments AGAINST Being Suspicious (REQUIRED - MIN 2)\n");
        for i in 0..against_bullets {
            text.push_str(&format!("- counterpoint {i}\n"));
        }
        text.push_str("\n## Balanced Conclusion\nWeighed.\n\n## Root Cause vs Symptom\nNeither.\n\n## Fix Required\nNo fix required\n");
        text
    }

    fn entry(suspicious: bool, score: f64) -> serde_json::Value {
        json!({
            "is_suspicious": suspicious,
            "is_key_event": false,
            "suspicion_score": score,
            "importance_score": 0.5,
            "causal_validity": {},
            "analysis": markdown(2, 2),
        })
    }

    fn two_level_dump() -> CausalityDump {
        dump_from_records(
            "p@2",
            vec![
                DumpEvent {
                    signal: "p".into(),
                    cycle: 2,
                    value: "FAIL".into(),
                    parents: vec!["ready_add@1".into()],
                },
                DumpEvent {
                    signal: "ready_add".into(),
                    cycle: 1,
                    value: "1'b0".into(),
                    parents: vec![],
                },
            ],
        )
        .unwrap()
    }

    fn graph_of(dump: &CausalityDump) -> CausalGraph {
        consolidate(&build_trace_tree(dump, dump.root_event(), 20).unwrap()).unwrap()
    }

    fn cache_with_rtl() -> ContextCache {
        let rtl = RtlCodeMap::from_files([(
            "accu.sv".to_string(),
            "module accu;\nassign ready_add = valid_out | !valid_in;\nendmodule\n".to_string(),
        )]);
        let docs = BTreeMap::from([(
            "accu_spec.md".to_string(),
            "The accumulator raises the output valid signal after four inputs.".to_string(),
        )]);
        prefetch(&["ready_add".to_string(), "p".to_string()], &rtl, &docs, 0.7)
    }

    #[test]
    fn batch_search_matches_linear_token_model() {
        // 5,000 token overhead plus 1,000 per node against a 50,000 budget.
        let fits = |n: usize| 5_000 + n * 1_000 <= 50_000;
        assert_eq!(binary_search_max_batch(100, fits), Ok(45));
        assert_eq!(binary_search_max_batch(45, fits), Ok(45));
        assert_eq!(binary_search_max_batch(10, fits), Ok(10));
        assert_eq!(binary_search_max_batch(1, |_| true), Ok(1));
        assert_eq!(binary_search_max_batch(3, |_| false), Err(SingleNodeOverBudget));
    }

    #[test]
    fn batch_search_stays_within_probe_bound() {
        for count in [2usize, 3, 7, 64, 100, 170] {
            for cap in [1usize, 2, count / 2 + 1, count] {
                let constructions = std::cell::Cell::new(0u32);
                let got = binary_search_max_batch(count, |n| {
                    constructions.set(constructions.get() + 1);
                    n <= cap
                })
                .unwrap();
                assert_eq!(got, cap.min(count));
                let bound = (count as f64).log2().ceil() as u32 + 2 + 1;
                assert!(constructions.get() <= bound, "count={count} cap={cap}: {} probes", constructions.get());
            }
        }
    }

    #[test]
    fn prompt_contains_node_table_and_rtl() {
        let dump = two_level_dump();
        let graph = graph_of(&dump);
        let cache = cache_with_rtl();
        let batch = vec!["ready_add@1".parse().unwrap()];
        let prompt = build_scan_prompt(&batch, &graph, &cache, "", &BTreeMap::new());
        assert!(prompt.contains("| n1 | ready_add | 1 | 1'b0 |"), "{prompt}");
        assert!(prompt.contains("assign ready_add = valid_out | !valid_in;"));
        assert!(prompt.contains("### SCENARIO\n(none provided)"));
        assert!(prompt.contains("Use this scoring rubric for suspicion_score"));
    }

    #[test]
    fn prompt_marks_missing_rtl() {
        let dump = two_level_dump();
        let graph = graph_of(&dump);
        let cache = cache_with_rtl();
        let batch = vec!["p@2".parse().unwrap()];
        let prompt = build_scan_prompt(&batch, &graph, &cache, "a scenario", &BTreeMap::new());
        assert!(prompt.contains(prompts::RTL_MISSING));
        assert!(prompt.contains("### SCENARIO\na scenario"));
        // Edge from outside the batch is labeled with the full key.
        assert!(prompt.contains("ready_add@1 -> n1"));
    }

    #[test]
    fn parses_well_formed_two_node_reply() {
        let batch: Vec<NodeKey> = vec!["a@1".parse().unwrap(), "b@2".parse().unwrap()];
        let reply = json!({"n1": entry(false, 0.1), "n2": entry(true, 0.7)}).to_string();
        let parsed = parse_scan_response(&reply, &batch, 0.5);
        assert!(parsed[&batch[0]].as_ref().unwrap().suspicion_score == 0.1);
        let second = parsed[&batch[1]].as_ref().unwrap();
        assert!(second.is_suspicious);
        assert_eq!(second.suspicion_score, 0.7);
    }

    #[test]
    fn score_out_of_range_is_a_schema_violation() {
        let batch: Vec<NodeKey> = vec!["a@1".parse().unwrap()];
        let reply = json!({"n1": entry(true, 1.4)}).to_string();
        let parsed = parse_scan_response(&reply, &batch, 0.5);
        assert_eq!(
            parsed[&batch[0]].as_ref().unwrap_err(),
            &ScanIssue::SchemaViolation { field: "suspicion_score".into() }
        );
    }

    #[test]
    fn sparse_bullets_are_rejected() {
        let batch: Vec<NodeKey> = vec!["a@1".parse().unwrap()];
        let mut thin = entry(true, 0.7);
        thin["analysis"] = json!(markdown(2, 1));
        let reply = json!({"n1": thin}).to_string();
        let parsed = parse_scan_response(&reply, &batch, 0.5);
        assert_eq!(parsed[&batch[0]].as_ref().unwrap_err(), &ScanIssue::MissingForAgainst);
    }

    #[test]
    fn floor_overrides_the_model_verdict() {
        let batch: Vec<NodeKey> = vec!["a@1".parse().unwrap()];
        let reply = json!({"n1": entry(true, 0.4)}).to_string();
        let parsed = parse_scan_response(&reply, &batch, 0.5);
        let analysis = parsed[&batch[0]].as_ref().unwrap();
        assert!(!analysis.is_suspicious, "floor 0.5 must override score 0.4");
    }

    #[test]
    fn missing_node_and_prose_replies() {
        let batch: Vec<NodeKey> = vec!["a@1".parse().unwrap(), "b@2".parse().unwrap()];
        let reply = format!("Here you go:\n```json\n{}\n```", json!({"n1": entry(false, 0.0)}));
        let parsed = parse_scan_response(&reply, &batch, 0.5);
        assert!(parsed[&batch[0]].is_ok());
        assert_eq!(parsed[&batch[1]].as_ref().unwrap_err(), &ScanIssue::MissingAnalysis);

        let garbage = parse_scan_response("not json at all", &batch, 0.5);
        assert!(garbage.values().all(|e| e == &Err(ScanIssue::Unparseable)));
    }

    #[test]
    fn scan_analyzes_levels_in_order_and_feeds_parent_verdicts_forward() {
        let dump = two_level_dump();
        let graph = graph_of(&dump);
        let cache = cache_with_rtl();
        let prompts_seen = std::sync::Arc::new(Mutex::new(Vec::<String>::new()));
        let seen = prompts_seen.clone();
        let gateway = LlmGateway::scripted(
            move |request| {
                seen.lock().unwrap().push(request.prompt.clone());
                let reply = if request.prompt.contains("| n1 | ready_add |") {
                    json!({"n1": entry(true, 0.7)})
                } else {
                    json!({"n1": entry(false, 0.1)})
                };
                Ok(reply.to_string())
            },
            GatewayConfig::default(),
        );
        let config = RunConfig::default();
        let result = scan(&graph, &cache, &gateway, &config, "scenario").unwrap();

        assert_eq!(result.batches_issued, 2);
        assert_eq!(result.analyses.len(), 2);
        assert!(result.unanalyzed.is_empty());
        assert_eq!(result.suspicious, vec!["ready_add@1".parse::<NodeKey>().unwrap()]);

        let prompts_seen = prompts_seen.lock().unwrap();
        assert!(prompts_seen[0].contains("| n1 | ready_add |"), "deepest level first");
        assert!(prompts_seen[1].contains("### PARENT ANALYSES"));
        assert!(prompts_seen[1].contains("ready_add@1: suspicious (suspicion 0.70)"));
    }

    #[test]
    fn failed_parse_retries_once_then_marks_unanalyzed() {
        let dump = two_level_dump();
        let graph = graph_of(&dump);
        let cache = cache_with_rtl();
        let gateway = LlmGateway::scripted(
            move |request| {
                if request.tag.ends_with(".retry") && request.prompt.contains("| n1 | ready_add |") {
                    // The deep node recovers on retry; the root never does.
                    Ok(json!({"n1": entry(false, 0.2)}).to_string())
                } else {
                    Ok("no json here".to_string())
                }
            },
            GatewayConfig::default(),
        );
        let config = RunConfig::default();
        let result = scan(&graph, &cache, &gateway, &config, "").unwrap();
        assert_eq!(result.analyses.len(), 1);
        assert_eq!(result.unanalyzed, vec!["p@2".parse::<NodeKey>().unwrap()]);
        assert_eq!(result.batches_issued, 2);
        assert_eq!(gateway.calls_issued(), 4, "each batch retried once");
    }

    #[test]
    fn oversized_context_is_truncated_for_single_nodes()  {
        let dump = two_level_dump();
        let graph = graph_of(&dump);
        let rtl = RtlCodeMap::from_files([(
            "big.sv".to_string(),
            format!("assign ready_add = 1'b0; // {}\n", "x".repeat(40_000)),
        )]);
        let cache = prefetch(&["ready_add".to_string()], &rtl, &BTreeMap::new(), 0.7);
        let truncated_seen = std::sync::Arc::new(Mutex::new(false));
        let seen = truncated_seen.clone();
        let gateway = LlmGateway::scripted(
            move |request| {
                if request.prompt.contains("| n1 | ready_add |") {
                    assert!(request.prompt.contains("(context truncated to fit budget)"));
                    *seen.lock().unwrap() = true;
                }
                Ok(json!({"n1": entry(false, 0.0)}).to_string())
            },
            GatewayConfig { max_prompt_tokens: 4_000, ..GatewayConfig::default() },
        );
        let config = RunConfig::default();
        let result = scan(&graph, &cache, &gateway, &config, "").unwrap();
        assert_eq!(result.analyses.len() + result.unanalyzed.len(), 2);
        assert!(*truncated_seen.lock().unwrap(), "big RTL batch never truncated");
    }

    #[test]
    fn scan_result_round_trips_through_json() {
        let batch: Vec<NodeKey> = vec!["a@1".parse().unwrap()];
        let reply = json!({"n1": entry(true, 0.9)}).to_string();
        let parsed = parse_scan_response(&reply, &batch, 0.5);
        let result = ScanResult {
            suspicious: batch.clone(),
            analyses: BTreeMap::from([(batch[0].clone(), parsed[&batch[0]].clone().unwrap())]),
            unanalyzed: vec![],
            batches_issued: 1,
        };
        let text = serde_json::to_string(&result).unwrap();
        let back: ScanResult = serde_json::from_str(&text).unwrap();
        assert_eq!(result, back);
    }
}
