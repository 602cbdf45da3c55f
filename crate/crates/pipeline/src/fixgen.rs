//! Ensemble RTL fix generation.
//!
//! Five context strategies each prompt for candidate fixes, then a best-of
//! meta pass reviews their union. Every candidate is validated against the
//! real RTL (exact substring first, whitespace-normalized window second),
//! deduplicated by a commutativity-aware signature, and ranked by base
//! confidence plus a consensus boost for fixes that multiple strategies
//! agree on.

use std::collections::{BTreeMap, BTreeSet};

use cexroot_core::config::RunConfig;
use cexroot_core::context::RtlCodeMap;
use cexroot_core::gateway::{GenerationRequest, LlmGateway};
use cexroot_core::hash::fnv1a64_hex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extract::{extract_json, number_field};
use crate::prompts;
use crate::rover::RoverOutcome;
use crate::scanner::ScanResult;

/// Prompting strategies in ensemble order; `best_of` always runs last over
/// the union of the others' validated output.
pub const STRATEGIES: [&str; 6] = [
    "full_context",
    "suspicious_focus",
    "causal_narratives_focus",
    "minimal_context",
    "bugs_and_suggestions_only",
    "best_of",
];

/// Suspicion cutoff (strict) for the suspicious_focus strategy.
pub const FOCUS_SUSPICION_CUTOFF: f64 = 0.7;
/// Consensus boost per contributing strategy.
pub const BOOST_PER_STRATEGY: f64 = 0.2;
/// Consensus boost cap.
pub const BOOST_CAP: f64 = 0.6;

#[derive(Debug, Error)]
pub enum FixError {
    #[error("strategy {strategy} produced no valid fixes after {attempts} attempts")]
    AllRetriesFailed { strategy: String, attempts: usize },
    #[error("no strategy produced a validated fix")]
    EmptyEnsemble,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FixCategory {
    #[serde(rename = "RTL Bug")]
    RtlBug,
    #[serde(rename = "Under-Constraint")]
    UnderConstraint,
    #[serde(rename = "Over-Constraint")]
    OverConstraint,
}

impl FixCategory {
    fn parse(text: &str) -> Option<Self> {
        match text {
            "RTL Bug" => Some(Self::RtlBug),
            "Under-Constraint" => Some(Self::UnderConstraint),
            "Over-Constraint" => Some(Self::OverConstraint),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationStatus {
    Exact,
    WhitespaceNormalized,
    Invalid,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixLocation {
    pub module: String,
    pub signal: String,
    pub file: String,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fix {
    pub category: FixCategory,
    /// Verbatim span from the RTL once validated.
    pub buggy_code: String,
    /// Replacement span.
    pub code: String,
    pub description: String,
    /// Base confidence claimed by the generating strategy.
    pub confidence: f64,
    pub location: FixLocation,
    pub strategies: BTreeSet<String>,
    pub validation: ValidationStatus,
    /// Base confidence plus the consensus boost, clamped to 1.0.
    pub final_confidence: f64,
    /// Dedup digest over the canonical buggy/fixed pair.
    pub signature: String,
    /// True when the span matched more than one location in the RTL.
    pub ambiguous: bool,
}

/// Read-only inputs shared by every strategy prompt.
pub struct FixBundle<'a> {
    pub scenario: &'a str,
    pub rtl: &'a RtlCodeMap,
    pub scan: &'a ScanResult,
    pub rover: &'a RoverOutcome,
}

/// Runs the whole ensemble: five base strategies, a best-of pass over their
/// validated union, signature merge, consensus boost, final ranking.
pub fn ensemble(
    bundle: &FixBundle,
    gateway: &LlmGateway,
    config: &RunConfig,
) -> Result<Vec<Fix>, FixError> {
    // signature -> (merged fix, earliest contributing strategy index)
    let mut merged: BTreeMap<String, (Fix, usize)> = BTreeMap::new();
    let mut arrival: Vec<String> = Vec::new();
    for (index, strategy) in STRATEGIES.iter().enumerate() {
        let prior: Vec<Fix> = arrival
            .iter()
            .map(|sig| merged[sig].0.clone())
            .collect();
        let Ok(fixes) = generate_fixes(strategy, bundle, &prior, gateway, config) else {
            continue;
        };
        for mut fix in fixes {
            fix.strategies = BTreeSet::from([strategy.to_string()]);
            fix.signature = create_signature(&fix);
            merge_fix(&mut merged, &mut arrival, fix, index);
        }
    }
    if merged.is_empty() {
        return Err(FixError::EmptyEnsemble);
    }
    let mut out: Vec<(Fix, usize)> = arrival
        .iter()
        .map(|sig| merged[sig].clone())
        .map(|(mut fix, first_strategy)| {
            let k = fix.strategies.len();
            let boost = (BOOST_PER_STRATEGY * k as f64).min(BOOST_CAP);
            fix.final_confidence = (fix.confidence + boost).min(1.0);
            (fix, first_strategy)
        })
        .collect();
    out.sort_by(|(a, sa), (b, sb)| {
        b.final_confidence
            .total_cmp(&a.final_confidence)
            .then(sa.cmp(sb))
            .then(a.signature.cmp(&b.signature))
    });
    Ok(out.into_iter().map(|(fix, _)| fix).collect())
}

/// Folds a validated fix into the signature-keyed pool.
fn merge_fix(
    merged: &mut BTreeMap<String, (Fix, usize)>,
    arrival: &mut Vec<String>,
    fix: Fix,
    strategy_index: usize,
) {
    match merged.get_mut(&fix.signature) {
        None => {
            arrival.push(fix.signature.clone());
            merged.insert(fix.signature.clone(), (fix, strategy_index));
        }
        Some((kept, _)) => {
            kept.confidence = kept.confidence.max(fix.confidence);
            kept.strategies.extend(fix.strategies.iter().cloned());
            kept.ambiguous |= fix.ambiguous;
            // Prefer an exactly matched span: later Exact contributors
            // replace a whitespace-normalized first arrival.
            if kept.validation != ValidationStatus::Exact
                && fix.validation == ValidationStatus::Exact
            {
                kept.buggy_code = fix.buggy_code;
                kept.code = fix.code;
                kept.validation = ValidationStatus::Exact;
                kept.location = fix.location;
            }
        }
    }
}

/// One strategy pass: build the prompt, parse fixes, retry on a completely
/// empty result with a reminder appended.
pub fn generate_fixes(
    strategy: &str,
    bundle: &FixBundle,
    prior: &[Fix],
    gateway: &LlmGateway,
    config: &RunConfig,
) -> Result<Vec<Fix>, FixError> {
    let base_prompt = build_fix_prompt(strategy, bundle, prior);
    let attempts = 1 + config.fix_retry_limit as usize;
    for attempt in 0..attempts {
        let (tag, prompt) = if attempt == 0 {
            (format!("fix.{strategy}"), base_prompt.clone())
        } else {
            (
                format!("fix.{strategy}.retry{attempt}"),
                format!("{base_prompt}{}", prompts::FIX_RETRY_SUFFIX),
            )
        };
        let mut request = GenerationRequest::new(tag, prompt);
        request.temperature = config.temperature;
        request.max_output_tokens = config.max_output_tokens;
        let Ok(reply) = gateway.generate(&request) else {
            continue;
        };
        // Only fixes whose buggy span resolves against the RTL count; a
        // reply full of unmatchable spans burns the attempt like an empty
        // one and earns the validation reminder.
        let valid: Vec<Fix> = parse_fix_reply(&reply)
            .into_iter()
            .filter_map(|mut fix| {
                (validate_fix(&mut fix, bundle.rtl) != ValidationStatus::Invalid).then_some(fix)
            })
            .collect();
        if !valid.is_empty() {
            return Ok(valid);
        }
    }
    Err(FixError::AllRetriesFailed { strategy: strategy.to_string(), attempts })
}

/// Full prompt for one strategy: scenario, RTL, strategy block, shared core
/// instructions.
pub fn build_fix_prompt(strategy: &str, bundle: &FixBundle, prior: &[Fix]) -> String {
    let scenario = if bundle.scenario.trim().is_empty() {
        prompts::NONE_PROVIDED
    } else {
        bundle.scenario
    };
    let mut rtl_section = String::new();
    for (path, text) in bundle.rtl.files() {
        rtl_section.push_str(&format!("// file: {path}\n{text}\n"));
    }
    if rtl_section.is_empty() {
        rtl_section.push_str(prompts::RTL_MISSING);
        rtl_section.push('\n');
    }
    let block = strategy_block(strategy, bundle, prior);
    format!(
        "Analyze this formal verification failure and generate RTL fixes.\n\n\
         ## PROBLEM DESCRIPTION\n{scenario}\n\n\
         ## RTL CODE\n{rtl_section}\n{block}\n{}",
        prompts::FIX_CORE_INSTRUCTIONS
    )
}

/// Ranked hypotheses paired with their pool records, best first.
fn ranked_hypotheses<'a>(
    rover: &'a RoverOutcome,
) -> Vec<&'a crate::rover::Hypothesis> {
    rover
        .ranking
        .iter()
        .filter_map(|r| rover.hypotheses.iter().find(|h| h.id == r.hypothesis_id))
        .collect()
}

fn strategy_block(strategy: &str, bundle: &FixBundle, prior: &[Fix]) -> String {
    match strategy {
        "full_context" => full_context_block(bundle),
        "suspicious_focus" => suspicious_focus_block(bundle),
        "causal_narratives_focus" => narratives_block(bundle),
        "minimal_context" => minimal_context_block(bundle),
        "bugs_and_suggestions_only" => bugs_and_suggestions_block(bundle),
        "best_of" => best_of_block(prior),
        other => panic!("unknown fix strategy {other:?}"),
    }
}

fn full_context_block(bundle: &FixBundle) -> String {
    let ranked = ranked_hypotheses(bundle.rover);
    let mut block = String::from("## Key Insights from Analysis:\n");
    let mut insights = 0;
    'outer: for h in &ranked {
        for insight in &h.insights {
            block.push_str(&format!("- {insight}\n"));
            insights += 1;
            if insights == 10 {
                break 'outer;
            }
        }
    }
    if insights == 0 {
        block.push_str("- (none)\n");
    }
    block.push_str("\n## Most Suspicious Signals:\n");
    for key in bundle.scan.suspicious.iter().take(5) {
        let score = bundle.scan.suspicion_of(key);
        block.push_str(&format!(
            "- Signal '{}' at cycle {}: suspicion score {score:.2}\n",
            key.signal, key.cycle
        ));
        if let Some(h) = ranked.iter().find(|h| h.seed == *key) {
            let picks: Vec<&str> =
                h.insights.iter().take(2).map(String::as_str).collect();
            if !picks.is_empty() {
                block.push_str(&format!("  Insights: {}\n", picks.join("; ")));
            }
        }
    }
    block.push_str("\n## Causal Analysis Narratives:\n");
    for (i, h) in ranked.iter().take(3).enumerate() {
        block.push_str(&format!("{}. {}\n", i + 1, h.statement));
    }
    block
}

fn suspicious_focus_block(bundle: &FixBundle) -> String {
    let mut focus: Vec<_> = bundle
        .scan
        .suspicious
        .iter()
        .filter(|k| bundle.scan.suspicion_of(k) > FOCUS_SUSPICION_CUTOFF)
        .collect();
    // A scan where nothing clears the cutoff still needs targets.
    if focus.is_empty() {
        focus = bundle.scan.suspicious.iter().collect();
    }
    let ranked = ranked_hypotheses(bundle.rover);
    let mut block = String::from("## CRITICAL: Focus on these suspicious signals:\n");
    for key in focus.iter().take(7) {
        let score = bundle.scan.suspicion_of(key);
        block.push_str(&format!(
            "- Signal '{}' (cycle {}): HIGH SUSPICION ({score:.2})\n",
            key.signal, key.cycle
        ));
        if let Some(h) = ranked.iter().find(|h| h.seed == **key) {
            for insight in h.insights.iter().take(3) {
                block.push_str(&format!("  -> {insight}\n"));
            }
        }
    }
    block.push_str("Prioritize fixes for these highly suspicious signals!\n");
    block
}

fn narratives_block(bundle: &FixBundle) -> String {
    let ranked = ranked_hypotheses(bundle.rover);
    let mut block = String::from("## Root Cause Narratives (FOCUS ON THESE):\n");
    for (i, h) in ranked.iter().take(5).enumerate() {
        block.push_str(&format!("### Narrative {}:\n", i + 1));
        block.push_str(&format!("{} - {}\n", h.title, h.statement));
        for step in &h.timeline {
            block.push_str(&format!("- cycle {}: {} [{}]\n", step.cycle, step.description, step.key));
        }
        for fact in &h.evidence_for {
            block.push_str(&format!("- evidence: {fact}\n"));
        }
    }
    block.push_str(
        "## Generate fixes that directly address the root causes identified in these narratives.\n",
    );
    block
}

fn minimal_context_block(bundle: &FixBundle) -> String {
    let root_cause = ranked_hypotheses(bundle.rover)
        .first()
        .map(|h| h.statement.clone())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| bundle.scenario.to_string());
    format!(
        "## Critical Issue:\nROOT CAUSE: {root_cause}\nGenerate 3-5 surgical fixes for this specific issue.\n"
    )
}

fn bugs_and_suggestions_block(bundle: &FixBundle) -> String {
    let mut block = String::from("## Bugs and Fix Suggestions:\n");
    for key in bundle.scan.suspicious.iter().take(5) {
        let Some(analysis) = bundle.scan.analyses.get(key) else { continue };
        block.push_str(&format!("Signal '{}' bugs:\n", key.signal));
        let bugs = section_bullets(&analysis.analysis_markdown, "## Arguments FOR Being Suspicious");
        if bugs.is_empty() {
            block.push_str("- (none reported)\n");
        }
        for bug in bugs.iter().take(2) {
            block.push_str(&format!("- {bug}\n"));
        }
        block.push_str("Suggested fixes:\n");
        let suggestions = section_lines(&analysis.analysis_markdown, "## Fix Required");
        if suggestions.is_empty() {
            block.push_str("- (none reported)\n");
        }
        for suggestion in suggestions.iter().take(2) {
            block.push_str(&format!("- {suggestion}\n"));
        }
    }
    block
}

fn best_of_block(prior: &[Fix]) -> String {
    let mut block = String::from("## Candidate Fixes From Prior Strategies:\n");
    if prior.is_empty() {
        block.push_str("(no candidates survived validation)\n");
    }
    for (i, fix) in prior.iter().enumerate() {
        let strategies: Vec<&str> = fix.strategies.iter().map(String::as_str).collect();
        block.push_str(&format!(
            "{}. [{}] confidence {:.2} - {}\nbuggy_code:\n{}\ncode:\n{}\n",
            i + 1,
            strategies.join(", "),
            fix.confidence,
            fix.description,
            fix.buggy_code,
            fix.code,
        ));
    }
    block.push_str(
        "\nReview the candidate fixes above, then select and refine the most promising solutions.\n",
    );
    block
}

/// Bullet lines under a markdown heading, up to the next `## ` heading.
fn section_bullets(markdown: &str, heading_prefix: &str) -> Vec<String> {
    section_lines(markdown, heading_prefix)
        .into_iter()
        .filter_map(|l| {
            l.strip_prefix("- ")
                .or_else(|| l.strip_prefix("* "))
                .map(str::to_string)
        })
        .collect()
}

/// Non-empty lines under a markdown heading, up to the next `## ` heading.
fn section_lines(markdown: &str, heading_prefix: &str) -> Vec<String> {
    let mut inside = false;
    let mut out = Vec::new();
    for line in markdown.lines() {
        if line.starts_with("## ") {
            inside = line.starts_with(heading_prefix);
            continue;
        }
        if inside && !line.trim().is_empty() {
            out.push(line.trim().to_string());
        }
    }
    out
}

/// Parses a fix-generation reply into candidate fixes (not yet validated).
/// Accepts a bare array or an object with a `fixes` array; rejects
/// placeholder or structurally forbidden spans; sorts by descending
/// confidence.
pub fn parse_fix_reply(reply: &str) -> Vec<Fix> {
    let Some(value) = extract_json(reply) else {
        return Vec::new();
    };
    let top_category = value
        .get("category")
        .and_then(|v| v.as_str())
        .and_then(FixCategory::parse)
        .unwrap_or(FixCategory::RtlBug);
    let items = match (value.as_array(), value.get("fixes").and_then(|v| v.as_array())) {
        (Some(items), _) => items.clone(),
        (None, Some(items)) => items.clone(),
        (None, None) => return Vec::new(),
    };
    let mut fixes: Vec<Fix> = items
        .iter()
        .filter_map(|item| parse_fix_item(item, top_category))
        .collect();
    fixes.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    fixes
}

fn parse_fix_item(item: &serde_json::Value, default_category: FixCategory) -> Option<Fix> {
    let buggy_code = item.get("buggy_code")?.as_str()?.to_string();
    let code = item.get("code")?.as_str()?.to_string();
    if buggy_code.trim().is_empty() || code.trim().is_empty() || buggy_code == code {
        return None;
    }
    if has_placeholder(&buggy_code) || has_placeholder(&code) {
        return None;
    }
    if has_forbidden_structure(&buggy_code) || has_forbidden_structure(&code) {
        return None;
    }
    let confidence = match item.get("confidence") {
        Some(_) => number_field(item, "confidence")?,
        None => 0.5,
    };
    if !(0.0..=1.0).contains(&confidence) {
        return None;
    }
    let category = item
        .get("category")
        .and_then(|v| v.as_str())
        .and_then(FixCategory::parse)
        .unwrap_or(default_category);
    let location = item
        .get("location")
        .map(|loc| FixLocation {
            module: loc.get("module").and_then(|v| v.as_str()).unwrap_or("").to_string(),
            signal: loc.get("signal").and_then(|v| v.as_str()).unwrap_or("").to_string(),
            file: loc.get("file").and_then(|v| v.as_str()).unwrap_or("").to_string(),
            line: loc.get("line").and_then(|v| v.as_u64()).unwrap_or(0) as usize,
        })
        .unwrap_or_default();
    Some(Fix {
        category,
        buggy_code,
        code,
        description: item.get("description").and_then(|v| v.as_str()).unwrap_or("").to_string(),
        confidence,
        location,
        strategies: BTreeSet::new(),
        validation: ValidationStatus::Invalid,
        final_confidence: confidence,
        signature: String::new(),
        ambiguous: false,
    })
}

/// TODO/TBD markers or `<identifier>` angle-bracket placeholders. Operators
/// like `<=` survive because the next character is not a name character.
fn has_placeholder(text: &str) -> bool {
    if text.contains("TODO") || text.contains("TBD") {
        return true;
    }
    let bytes = text.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if b == b'<' {
            if let Some(&next) = bytes.get(i + 1) {
                if next.is_ascii_alphabetic() || next == b'_' {
                    return true;
                }
            }
        }
    }
    false
}

/// Structural keywords that violate the single-minimal-span rule. Word-level
/// check so identifiers like `end_cnt` pass.
fn has_forbidden_structure(text: &str) -> bool {
    text.split(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
        .any(|word| matches!(word, "begin" | "end" | "case" | "casez" | "casex" | "endcase"))
}

/// Two-stage validation. Exact substring match wins; otherwise a
/// whitespace-normalized window match rewrites `buggy_code` to the verbatim
/// window so later patching stays literal. Location is set to the first
/// match; additional matches only set the ambiguity flag.
pub fn validate_fix(fix: &mut Fix, rtl: &RtlCodeMap) -> ValidationStatus {
    let mut matches: Vec<(String, usize)> = Vec::new();
    for (path, text) in rtl.files() {
        let mut from = 0;
        while let Some(pos) = text[from..].find(&fix.buggy_code) {
            matches.push((path.to_string(), from + pos));
            from += pos + 1;
        }
    }
    if let Some((path, offset)) = matches.first() {
        fix.validation = ValidationStatus::Exact;
        fix.location.file = path.clone();
        fix.location.line = rtl.line_of_offset(path, *offset).unwrap_or(0);
        fix.ambiguous = matches.len() > 1;
        return ValidationStatus::Exact;
    }

    let (needle, _) = normalize_with_map(&fix.buggy_code);
    if needle.is_empty() {
        fix.validation = ValidationStatus::Invalid;
        return ValidationStatus::Invalid;
    }
    let mut windows: Vec<(String, usize, usize)> = Vec::new();
    for (path, text) in rtl.files() {
        let (normalized, map) = normalize_with_map(text);
        let mut from = 0;
        while let Some(pos) = normalized[from..].find(&needle) {
            let start = from + pos;
            let end = start + needle.len();
            windows.push((path.to_string(), map[start].0, map[end - 1].1));
            from = start + 1;
        }
    }
    if let Some((path, start, end)) = windows.first() {
        let text = rtl.get(path).expect("window path came from the map");
        fix.buggy_code = text[*start..*end].to_string();
        fix.validation = ValidationStatus::WhitespaceNormalized;
        fix.location.file = path.clone();
        fix.location.line = rtl.line_of_offset(path, *start).unwrap_or(0);
        fix.ambiguous = windows.len() > 1;
        return ValidationStatus::WhitespaceNormalized;
    }
    fix.validation = ValidationStatus::Invalid;
    ValidationStatus::Invalid
}

/// Whitespace canonical form plus, per normalized byte, the original byte
/// range it came from. Each line is stripped of leading and trailing blanks
/// and internal blank runs collapse to one space; newlines survive.
fn normalize_with_map(text: &str) -> (String, Vec<(usize, usize)>) {
    let mut out = String::new();
    let mut map: Vec<(usize, usize)> = Vec::new();
    let mut line_has_content = false;
    let mut pending_ws: Option<(usize, usize)> = None;
    for (offset, c) in text.char_indices() {
        let len = c.len_utf8();
        if c == '\n' {
            out.push('\n');
            map.push((offset, offset + len));
            line_has_content = false;
            pending_ws = None;
        } else if c == ' ' || c == '\t' || c == '\r' {
            if line_has_content {
                pending_ws = match pending_ws {
                    None => Some((offset, offset + len)),
                    Some((start, _)) => Some((start, offset + len)),
                };
            }
        } else {
            if let Some(range) = pending_ws.take() {
                out.push(' ');
                map.push(range);
            }
            out.push(c);
            map.push((offset, offset + len));
            line_has_content = true;
        }
    }
    (out, map)
}

const COMMUTATIVE_OPS: [&str; 7] = ["&&", "||", "&", "|", "^", "+", "*"];

/// Dedup digest over the canonicalized buggy/fixed pair.
pub fn create_signature(fix: &Fix) -> String {
    signature_of(&fix.buggy_code, &fix.code)
}

/// Signature of a buggy/replacement span pair outside any [`Fix`]; verifier
/// tables key their outcomes with this.
pub fn signature_of(buggy_code: &str, code: &str) -> String {
    let pair = format!("{}\u{1}{}", canonicalize(buggy_code), canonicalize(code));
    fnv1a64_hex(pair.as_bytes())
}

/// Canonical text for signatures: comments stripped, tokens single-spaced,
/// and operand order normalized inside chains of one commutative operator.
pub fn canonicalize(text: &str) -> String {
    let stripped = strip_comments(text);
    let tokens = tokenize(&stripped);
    sort_commutative_chains(&tokens).join(" ")
}

fn strip_comments(text: &str) -> String {
    let bytes = text.as_bytes();
    let mut out = String::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i..].starts_with(b"//") {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
        } else if bytes[i..].starts_with(b"/*") {
            i += 2;
            while i < bytes.len() && !bytes[i..].starts_with(b"*/") {
                i += 1;
            }
            i = (i + 2).min(bytes.len());
        } else {
            let c = text[i..].chars().next().unwrap();
            out.push(c);
            i += c.len_utf8();
        }
    }
    out
}

/// Splits into word tokens (identifiers, numbers, based literals, selects)
/// and operator tokens, longest operators first.
fn tokenize(text: &str) -> Vec<String> {
    const OPERATORS: [&str; 18] = [
        "<<<", ">>>", "===", "!==", "&&", "||", "==", "!=", "<=", ">=", "<<", ">>", "->", "**",
        "~&", "~|", "~^", "^~",
    ];
    let is_word_char =
        |c: char| c.is_ascii_alphanumeric() || matches!(c, '_' | '$' | '.' | '\'' | '[' | ']');
    let mut tokens = Vec::new();
    let mut rest = text.trim_start();
    'outer: while !rest.is_empty() {
        let c = rest.chars().next().unwrap();
        if c.is_whitespace() {
            rest = rest.trim_start();
            continue;
        }
        if is_word_char(c) {
            let end = rest.find(|ch: char| !is_word_char(ch)).unwrap_or(rest.len());
            tokens.push(rest[..end].to_string());
            rest = &rest[end..];
            continue;
        }
        for op in OPERATORS {
            if rest.starts_with(op) {
                tokens.push(op.to_string());
                rest = &rest[op.len()..];
                continue 'outer;
            }
        }
        tokens.push(c.to_string());
        rest = &rest[c.len_utf8()..];
    }
    tokens
}

/// Reorders operands inside maximal chains of a single commutative operator
/// at parenthesis depth zero, recursing into parenthesized groups. A chain
/// ends at any other operator or punctuation. Chains mixing two different
/// commutative operators, or with an empty operand, are emitted untouched
/// because operator precedence makes reordering unsafe.
fn sort_commutative_chains(tokens: &[String]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut chain = Chain::default();

    let mut i = 0;
    while i < tokens.len() {
        let token = &tokens[i];
        if token == "(" {
            // Swallow the whole group into the current operand, canonicalized.
            let mut depth = 1;
            let mut j = i + 1;
            while j < tokens.len() && depth > 0 {
                match tokens[j].as_str() {
                    "(" => depth += 1,
                    ")" => depth -= 1,
                    _ => {}
                }
                j += 1;
            }
            let inner_end = if depth == 0 { j - 1 } else { j };
            let mut group = vec!["(".to_string()];
            group.extend(sort_commutative_chains(&tokens[i + 1..inner_end]));
            if depth == 0 {
                group.push(")".to_string());
            }
            chain.push_operand_tokens(&group);
            i = j;
            continue;
        }
        if COMMUTATIVE_OPS.contains(&token.as_str()) {
            chain.push_operator(token);
            i += 1;
            continue;
        }
        // Unary negation binds tighter than any chain operator, so it stays
        // glued to the operand it prefixes and moves with it when sorted.
        if token == "!" || token == "~" {
            chain.push_operand_tokens(std::slice::from_ref(token));
            i += 1;
            continue;
        }
        let structural = token.chars().all(|c| !c.is_ascii_alphanumeric())
            && !token.starts_with(|c: char| {
                c == '_' || c == '$' || c == '.' || c == '\'' || c == '[' || c == ']'
            })
            && token != ")";
        if structural {
            chain.flush_into(&mut out);
            out.push(token.clone());
        } else {
            chain.push_operand_tokens(std::slice::from_ref(token));
        }
        i += 1;
    }
    chain.flush_into(&mut out);
    out
}

/// One commutative chain under construction between structural separators.
#[derive(Default)]
struct Chain {
    segments: Vec<Vec<String>>,
    raw: Vec<String>,
    op: Option<String>,
    poisoned: bool,
}

impl Chain {
    fn push_operand_tokens(&mut self, tokens: &[String]) {
        if self.segments.is_empty() {
            self.segments.push(Vec::new());
        }
        if !self.poisoned {
            self.segments.last_mut().unwrap().extend(tokens.iter().cloned());
        }
        self.raw.extend(tokens.iter().cloned());
    }

    fn push_operator(&mut self, token: &str) {
        if self.segments.is_empty() {
            self.segments.push(Vec::new());
        }
        if !self.poisoned {
            match &self.op {
                None => {
                    self.op = Some(token.to_string());
                    self.segments.push(Vec::new());
                }
                Some(op) if op == token => self.segments.push(Vec::new()),
                Some(_) => self.poisoned = true,
            }
        }
        self.raw.push(token.to_string());
    }

    fn flush_into(&mut self, out: &mut Vec<String>) {
        let sortable = !self.poisoned
            && self.op.is_some()
            && self.segments.len() >= 2
            && self.segments.iter().all(|s| !s.is_empty());
        if sortable {
            let op = self.op.clone().unwrap();
            self.segments.sort_by_key(|s| s.join(" "));
            for (i, segment) in self.segments.iter().enumerate() {
                if i > 0 {
                    out.push(op.clone());
                }
                out.extend(segment.iter().cloned());
            }
        } else {
            out.extend(self.raw.iter().cloned());
        }
        *self = Chain::default();
    }
}

/// Applies a validated fix: replaces the first occurrence of `buggy_code`.
pub fn apply_fix(file_text: &str, fix: &Fix) -> Option<String> {
    let pos = file_text.find(&fix.buggy_code)?;
    let mut patched = String::with_capacity(file_text.len());
    patched.push_str(&file_text[..pos]);
    patched.push_str(&fix.code);
    patched.push_str(&file_text[pos + fix.buggy_code.len()..]);
    Some(patched)
}

/// Reverts an applied fix: replaces the first occurrence of `code` with the
/// original span.
pub fn revert_fix(patched_text: &str, fix: &Fix) -> Option<String> {
    let pos = patched_text.find(&fix.code)?;
    let mut restored = String::with_capacity(patched_text.len());
    restored.push_str(&patched_text[..pos]);
    restored.push_str(&fix.buggy_code);
    restored.push_str(&patched_text[pos + fix.code.len()..]);
    Some(restored)
}
