//! Final debug report: ranked hypotheses with their evidence, a unified
//! causal timeline, validated fixes, and specification cross-references.
//!
//! Building and rendering are pure functions. The same [`DebugReport`] value
//! always renders to the same bytes, so replayed runs produce identical
//! artifacts.

use std::collections::BTreeSet;

use cexroot_core::context::ContextCache;
use cexroot_core::event::NodeKey;
use cexroot_core::graph::{CausalGraph, GraphStats};
use serde::{Deserialize, Serialize};

use crate::fixgen::Fix;
use crate::rover::{Hypothesis, HypothesisStatus, RankedHypothesis, RoverOutcome};
use crate::scanner::ScanResult;

/// One event of the merged causal timeline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub cycle: u64,
    pub key: NodeKey,
    pub value: String,
    pub suspicious: bool,
    /// First description offered for this event in rank order; may be empty.
    pub description: String,
}

/// One hypothesis as presented to the reader, in rank order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportHypothesis {
    /// 1-based position in the ranking.
    pub rank: usize,
    pub id: String,
    pub seed: NodeKey,
    pub title: String,
    pub statement: String,
    pub confidence: f64,
    pub evidence_for: Vec<String>,
    pub evidence_against: Vec<String>,
    pub insights: Vec<String>,
    pub status: HypothesisStatus,
    pub scores: RankedHypothesis,
}

/// A specification passage cited by the report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecRef {
    pub doc_id: String,
    pub excerpt: String,
}

/// Run bookkeeping shown at the end of the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub graph: GraphStats,
    pub scan_batches: u64,
    pub rover_iterations: usize,
    pub gateway_calls: usize,
    /// None when the run replayed a cassette and timing is meaningless.
    pub wall_time_seconds: Option<f64>,
}

/// Everything the final report contains, in render order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebugReport {
    pub headline: String,
    pub scenario: String,
    pub root: NodeKey,
    pub root_value: String,
    pub hypotheses: Vec<ReportHypothesis>,
    pub timeline: Vec<TimelineEntry>,
    pub fixes: Vec<Fix>,
    pub spec_refs: Vec<SpecRef>,
    pub metadata: RunMetadata,
}

/// Borrowed inputs from the earlier pipeline stages.
pub struct ReportInputs<'a> {
    pub scenario: &'a str,
    pub graph: &'a CausalGraph,
    pub scan: &'a ScanResult,
    pub rover: &'a RoverOutcome,
    pub fixes: &'a [Fix],
    pub cache: &'a ContextCache,
    pub levels: &'a [Vec<NodeKey>],
    pub gateway_calls: usize,
    pub wall_time_seconds: Option<f64>,
}

/// Assembles the report from the pipeline outputs. Pure: no I/O, no clock.
pub fn build_report(inputs: &ReportInputs) -> DebugReport {
    let hypotheses = ordered_hypotheses(inputs.rover);
    let headline = hypotheses
        .iter()
        .find(|h| h.status != HypothesisStatus::Unseeded)
        .map(|h| if h.title.is_empty() { h.statement.clone() } else { h.title.clone() })
        .unwrap_or_else(|| "no root cause hypothesis established".to_string());
    let timeline = build_timeline(
        &inputs.rover.hypotheses,
        &inputs.rover.ranking,
        inputs.graph,
        inputs.scan,
    );
    let spec_refs = collect_spec_refs(&hypotheses, inputs.cache);
    let root = inputs.graph.root().clone();
    let root_value = inputs.graph.value_of(&root).unwrap_or("?").to_string();
    DebugReport {
        headline,
        scenario: inputs.scenario.to_string(),
        root,
        root_value,
        hypotheses,
        timeline,
        fixes: inputs.fixes.to_vec(),
        spec_refs,
        metadata: RunMetadata {
            graph: inputs.graph.stats(inputs.levels),
            scan_batches: inputs.scan.batches_issued,
            rover_iterations: inputs.rover.iterations,
            gateway_calls: inputs.gateway_calls,
            wall_time_seconds: inputs.wall_time_seconds,
        },
    }
}

/// Union of every hypothesis timeline plus the root failure event,
/// deduplicated by node key. The first description encountered in rank order
/// wins; entries sort by cycle then key.
pub fn build_timeline(
    hypotheses: &[Hypothesis],
    ranking: &[RankedHypothesis],
    graph: &CausalGraph,
    scan: &ScanResult,
) -> Vec<TimelineEntry> {
    let mut seen: BTreeSet<NodeKey> = BTreeSet::new();
    let mut entries: Vec<TimelineEntry> = Vec::new();
    let mut push = |key: &NodeKey, description: &str| {
        if seen.insert(key.clone()) {
            entries.push(TimelineEntry {
                cycle: key.cycle,
                key: key.clone(),
                value: graph.value_of(key).unwrap_or("?").to_string(),
                suspicious: scan.suspicious.contains(key),
                description: description.to_string(),
            });
        }
    };
    for ranked in ranking {
        let Some(hypothesis) =
            hypotheses.iter().find(|h| h.id == ranked.hypothesis_id)
        else {
            continue;
        };
        for step in &hypothesis.timeline {
            push(&step.key, &step.description);
        }
    }
    // Hypotheses missing from the ranking still contribute their steps.
    for hypothesis in hypotheses {
        for step in &hypothesis.timeline {
            push(&step.key, &step.description);
        }
    }
    push(graph.root(), "");
    entries.sort_by(|a, b| a.cycle.cmp(&b.cycle).then_with(|| a.key.cmp(&b.key)));
    entries
}

/// Renders the report as markdown. Byte-deterministic for a fixed report.
pub fn render_markdown(report: &DebugReport) -> String {
    let mut out = String::new();
    let push_line = |out: &mut String, line: &str| {
        out.push_str(line);
        out.push('\n');
    };

    push_line(&mut out, "# Debug Report");
    push_line(&mut out, "");
    push_line(
        &mut out,
        &format!("Failing check: {} = {}", report.root, report.root_value),
    );
    if !report.scenario.is_empty() {
        push_line(&mut out, "");
        push_line(&mut out, &report.scenario);
    }
    push_line(&mut out, "");

    push_line(&mut out, "## Headline");
    push_line(&mut out, "");
    push_line(&mut out, &report.headline);
    push_line(&mut out, "");

    push_line(&mut out, "## Ranked Hypotheses");
    push_line(&mut out, "");
    if report.hypotheses.is_empty() {
        push_line(&mut out, "no hypotheses produced");
        push_line(&mut out, "");
    }
    for hypothesis in &report.hypotheses {
        let title = if hypothesis.title.is_empty() {
            format!("(unseeded: {})", hypothesis.seed)
        } else {
            hypothesis.title.clone()
        };
        push_line(&mut out, &format!("### Hypothesis {}: {}", hypothesis.rank, title));
        push_line(&mut out, "");
        push_line(&mut out, &format!("Confidence: {}", percent(hypothesis.confidence)));
        if !hypothesis.statement.is_empty() {
            push_line(&mut out, "");
            push_line(&mut out, &hypothesis.statement);
        }
        push_line(&mut out, "");
        render_bullets(&mut out, "Supporting Evidence", &hypothesis.evidence_for);
        render_bullets(&mut out, "Contradicting Evidence", &hypothesis.evidence_against);
        render_bullets(&mut out, "Analysis", &hypothesis.insights);
        push_line(&mut out, "**Scores**");
        push_line(&mut out, "");
        let s = &hypothesis.scores;
        push_line(
            &mut out,
            &format!(
                "sufficiency {:.2}, evidence {:.2}, mechanistic insight {:.2}, \
                 actionability {:.2}, coherence {:.2}; overall {:.2}",
                s.sufficiency, s.evidence, s.mechanistic_insight, s.actionability, s.coherence,
                s.overall
            ),
        );
        if !s.reasoning.is_empty() {
            push_line(&mut out, "");
            push_line(&mut out, &s.reasoning);
        }
        push_line(&mut out, "");
    }

    push_line(&mut out, "## Causal Chain Timeline");
    push_line(&mut out, "");
    for entry in &report.timeline {
        let marker = if entry.suspicious { " (suspicious)" } else { "" };
        push_line(
            &mut out,
            &format!(
                "- Cycle {}: {} = {}{}",
                entry.cycle, entry.key.signal, entry.value, marker
            ),
        );
        if !entry.description.is_empty() {
            push_line(&mut out, &format!("  {}", entry.description));
        }
    }
    push_line(&mut out, "");

    push_line(&mut out, "## Suggested Fixes");
    push_line(&mut out, "");
    if report.fixes.is_empty() {
        push_line(&mut out, "no validated fixes produced");
        push_line(&mut out, "");
    }
    for (index, fix) in report.fixes.iter().enumerate() {
        push_line(
            &mut out,
            &format!(
                "### Fix {}: {} (Confidence: {})",
                index + 1,
                category_label(fix),
                percent(fix.final_confidence)
            ),
        );
        push_line(&mut out, "");
        push_line(
            &mut out,
            &format!(
                "Location: {} line {}, signal {}",
                display_or(&fix.location.file, "(unknown file)"),
                fix.location.line,
                display_or(&fix.location.signal, "(unknown)")
            ),
        );
        push_line(&mut out, &format!("Validation: {}", validation_label(fix)));
        let strategies: Vec<&str> = fix.strategies.iter().map(String::as_str).collect();
        push_line(&mut out, &format!("Strategies: {}", strategies.join(", ")));
        push_line(&mut out, "");
        push_line(&mut out, "```");
        push_line(&mut out, "// Buggy Code:");
        push_line(&mut out, &fix.buggy_code);
        push_line(&mut out, "");
        push_line(&mut out, "// Fixed Code:");
        push_line(&mut out, &fix.code);
        push_line(&mut out, "```");
        if !fix.description.is_empty() {
            push_line(&mut out, "");
            push_line(&mut out, &fix.description);
        }
        push_line(&mut out, "");
    }

    push_line(&mut out, "## Specification References");
    push_line(&mut out, "");
    if report.spec_refs.is_empty() {
        push_line(&mut out, "(none)");
    }
    for reference in &report.spec_refs {
        push_line(&mut out, &format!("- {}: {}", reference.doc_id, reference.excerpt));
    }
    push_line(&mut out, "");

    push_line(&mut out, "## Run Metadata");
    push_line(&mut out, "");
    let g = &report.metadata.graph;
    push_line(
        &mut out,
        &format!(
            "- Graph: {} nodes, {} edges, {} signals, max depth {}",
            g.node_count, g.edge_count, g.unique_signal_count, g.max_depth
        ),
    );
    push_line(&mut out, &format!("- Scan batches: {}", report.metadata.scan_batches));
    push_line(&mut out, &format!("- Rover iterations: {}", report.metadata.rover_iterations));
    push_line(&mut out, &format!("- Gateway calls: {}", report.metadata.gateway_calls));
    match report.metadata.wall_time_seconds {
        Some(seconds) => push_line(&mut out, &format!("- Wall time: {seconds:.2}s")),
        None => push_line(&mut out, "- Wall time: not measured (replay)"),
    }
    out
}

fn ordered_hypotheses(rover: &RoverOutcome) -> Vec<ReportHypothesis> {
    let mut out = Vec::new();
    for (index, ranked) in rover.ranking.iter().enumerate() {
        let Some(hypothesis) =
            rover.hypotheses.iter().find(|h| h.id == ranked.hypothesis_id)
        else {
            continue;
        };
        out.push(ReportHypothesis {
            rank: index + 1,
            id: hypothesis.id.clone(),
            seed: hypothesis.seed.clone(),
            title: hypothesis.title.clone(),
            statement: hypothesis.statement.clone(),
            confidence: hypothesis.confidence,
            evidence_for: hypothesis.evidence_for.clone(),
            evidence_against: hypothesis.evidence_against.clone(),
            insights: hypothesis.insights.clone(),
            status: hypothesis.status,
            scores: ranked.clone(),
        });
    }
    out
}

fn collect_spec_refs(hypotheses: &[ReportHypothesis], cache: &ContextCache) -> Vec<SpecRef> {
    let mut seen: BTreeSet<(String, String)> = BTreeSet::new();
    let mut refs = Vec::new();
    let mut push = |doc_id: &str, text: &str| {
        if seen.insert((doc_id.to_string(), text.to_string())) {
            refs.push(SpecRef { doc_id: doc_id.to_string(), excerpt: text.to_string() });
        }
    };
    for hypothesis in hypotheses {
        if hypothesis.status == HypothesisStatus::Unseeded {
            continue;
        }
        for excerpt in &cache.lookup(&hypothesis.seed.signal).spec_excerpts {
            push(&excerpt.doc_id, &excerpt.text);
        }
    }
    for excerpt in cache.global_excerpts() {
        push(&excerpt.doc_id, &excerpt.text);
    }
    refs
}

fn percent(fraction: f64) -> String {
    format!("{:.1}%", fraction * 100.0)
}

fn display_or<'a>(text: &'a str, fallback: &'a str) -> &'a str {
    if text.is_empty() { fallback } else { text }
}

fn category_label(fix: &Fix) -> &'static str {
    match fix.category {
        crate::fixgen::FixCategory::RtlBug => "RTL Bug",
        crate::fixgen::FixCategory::UnderConstraint => "Under-Constraint",
        crate::fixgen::FixCategory::OverConstraint => "Over-Constraint",
    }
}

fn validation_label(fix: &Fix) -> &'static str {
    match fix.validation {
        crate::fixgen::ValidationStatus::Exact => "exact",
        crate::fixgen::ValidationStatus::WhitespaceNormalized => "whitespace-normalized",
        crate::fixgen::ValidationStatus::Invalid => "invalid",
    }
}

fn render_bullets(out: &mut String, heading: &str, bullets: &[String]) {
    out.push_str(&format!("**{heading}**\n"));
    out.push('\n');
    if bullets.is_empty() {
        out.push_str("(none)\n");
    }
    for bullet in bullets {
        out.push_str(&format!("- {bullet}\n"));
    }
    out.push('\n');
}
