//! Agentic hypothesis exploration over the causal graph.
//!
//! One hypothesis is seeded per suspicious node, then iteratively refined by
//! walking the graph frontier: each iteration an active hypothesis selects up
//! to three frontier nodes, analyzes them against its narrative, folds the
//! evidence into its confidence, and expands the frontier with the neighbors
//! it just uncovered. A pool barrier between iterations retires converged and
//! weak hypotheses and refills vacated slots. The surviving pool is ranked by
//! a weighted five-criterion score.

use std::collections::VecDeque;
use std::collections::{BTreeMap, BTreeSet};

use cexroot_core::config::{RankingMode, RunConfig};
use cexroot_core::context::ContextCache;
use cexroot_core::event::NodeKey;
use cexroot_core::gateway::{GenerationRequest, LlmGateway};
use cexroot_core::graph::CausalGraph;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extract::{extract_json, number_field, string_list};
use crate::prompts;
use crate::scanner::ScanResult;

/// Scale of a single confidence update.
pub const CONFIDENCE_STEP: f64 = 0.1;
/// Confidence assigned to a freshly seeded hypothesis.
pub const INITIAL_CONFIDENCE: f64 = 0.5;
/// Ranking weights: sufficiency, evidence, mechanistic insight,
/// actionability, coherence.
pub const RANK_WEIGHTS: [f64; 5] = [0.30, 0.25, 0.25, 0.15, 0.05];

#[derive(Debug, Error)]
pub enum RoverError {
    #[error("scan produced no suspicious nodes; nothing to explore")]
    NoSuspiciousNodes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HypothesisStatus {
    /// Still exploring.
    Active,
    /// Confidence reached the convergence threshold.
    Converged,
    /// Confidence stayed low after enough iterations; retained for reporting.
    Weak,
    /// The seeding call failed; the slot exists but was never explored.
    Unseeded,
}

/// One event on a hypothesis timeline, kept sorted by cycle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimelineStep {
    pub cycle: u64,
    pub key: NodeKey,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub id: String,
    pub seed: NodeKey,
    /// Scanner suspicion of the seed, used for ranking tie-breaks.
    pub seed_suspicion: f64,
    pub title: String,
    pub statement: String,
    pub timeline: Vec<TimelineStep>,
    pub evidence_for: Vec<String>,
    pub evidence_against: Vec<String>,
    pub insights: Vec<String>,
    pub confidence: f64,
    /// Unexplored candidate nodes, ordered by descending suspicion, then
    /// descending degree, then key.
    pub frontier: Vec<NodeKey>,
    pub explored: BTreeSet<NodeKey>,
    pub status: HypothesisStatus,
    pub iterations_survived: usize,
}

/// Parsed per-node analysis inside a narrative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NarrativeAnalysis {
    pub is_relevant: bool,
    pub is_critical: bool,
    pub event_description: String,
    pub importance: f64,
    pub evidence_strength: f64,
    pub evidence_for: Vec<String>,
    pub evidence_against: Vec<String>,
    pub new_insights: Vec<String>,
}

/// One row of the final ranking, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedHypothesis {
    pub hypothesis_id: String,
    pub sufficiency: f64,
    pub evidence: f64,
    pub mechanistic_insight: f64,
    pub actionability: f64,
    pub coherence: f64,
    /// Always the local weighted sum of the five criteria.
    pub overall: f64,
    pub reasoning: String,
}

impl RankedHypothesis {
    pub fn from_criteria(
        hypothesis_id: String,
        criteria: [f64; 5],
        reasoning: String,
    ) -> Self {
        let overall = weighted_overall(&criteria);
        let [sufficiency, evidence, mechanistic_insight, actionability, coherence] = criteria;
        Self {
            hypothesis_id,
            sufficiency,
            evidence,
            mechanistic_insight,
            actionability,
            coherence,
            overall,
            reasoning,
        }
    }
}

/// Weighted sum of the five criterion scores.
pub fn weighted_overall(criteria: &[f64; 5]) -> f64 {
    criteria.iter().zip(RANK_WEIGHTS).map(|(c, w)| c * w).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoverOutcome {
    pub hypotheses: Vec<Hypothesis>,
    pub ranking: Vec<RankedHypothesis>,
    /// Iterations actually executed before convergence or the cap.
    pub iterations: usize,
}

/// Full exploration pass: seed, iterate, rank.
pub fn rove(
    graph: &CausalGraph,
    scan: &ScanResult,
    cache: &ContextCache,
    gateway: &LlmGateway,
    config: &RunConfig,
    scenario: &str,
) -> Result<RoverOutcome, RoverError> {
    if scan.suspicious.is_empty() {
        return Err(RoverError::NoSuspiciousNodes);
    }
    let active_cap = config.active_narratives.unwrap_or(usize::MAX).max(1);
    let seed_count = scan.suspicious.len().min(active_cap);
    let mut pool: Vec<Hypothesis> = Vec::new();
    let mut unseeded: VecDeque<NodeKey> = VecDeque::new();
    for (i, key) in scan.suspicious.iter().enumerate() {
        if i < seed_count {
            let id = format!("h{}", pool.len() + 1);
            pool.push(seed_hypothesis(id, key, graph, scan, cache, gateway, config));
        } else {
            unseeded.push_back(key.clone());
        }
    }
    let refill_floor = config.min_narratives.min(active_cap);

    let mut iterations = 0usize;
    for iter in 1..=config.max_iterations {
        let snapshot: Vec<usize> = pool
            .iter()
            .enumerate()
            .filter(|(_, h)| h.status == HypothesisStatus::Active)
            .map(|(i, _)| i)
            .collect();
        let explorable = snapshot.iter().any(|&i| !pool[i].frontier.is_empty());
        if !explorable {
            break;
        }
        iterations = iter;
        for &idx in &snapshot {
            if pool[idx].frontier.is_empty() {
                continue;
            }
            let targets = select_targets(&pool[idx], graph, gateway, config, iter);
            for (t, target) in targets.iter().enumerate() {
                // A cap-pressure eviction earlier in this step invalidates
                // the selection; skipped targets stay unexplored.
                if !pool[idx].frontier.contains(target) {
                    continue;
                }
                explore_step(
                    &mut pool[idx],
                    target,
                    graph,
                    scan,
                    cache,
                    gateway,
                    config,
                    iter,
                    t + 1,
                );
            }
        }
        apply_barrier(&mut pool, &snapshot, config);
        while active_count(&pool) < refill_floor {
            let Some(key) = unseeded.pop_front() else { break };
            let id = format!("h{}", pool.len() + 1);
            pool.push(seed_hypothesis(id, &key, graph, scan, cache, gateway, config));
        }
    }

    let ranking = rank_hypotheses(&pool, gateway, config, scenario);
    Ok(RoverOutcome { hypotheses: pool, ranking, iterations })
}

fn active_count(pool: &[Hypothesis]) -> usize {
    pool.iter().filter(|h| h.status == HypothesisStatus::Active).count()
}

/// End-of-iteration barrier: credit survival, retire converged and weak
/// hypotheses. `snapshot` holds pool indices that were active this iteration.
pub fn apply_barrier(pool: &mut [Hypothesis], snapshot: &[usize], config: &RunConfig) {
    for &idx in snapshot {
        pool[idx].iterations_survived += 1;
    }
    for h in pool.iter_mut() {
        if h.status != HypothesisStatus::Active {
            continue;
        }
        if h.confidence >= config.convergence_confidence {
            h.status = HypothesisStatus::Converged;
        } else if h.confidence < config.weak_confidence
            && h.iterations_survived >= config.weak_after_iters
        {
            h.status = HypothesisStatus::Weak;
        }
    }
}

/// Seeds one hypothesis for a suspicious node. Gateway or parse failures
/// yield an unseeded placeholder with zero confidence.
pub fn seed_hypothesis(
    id: String,
    seed: &NodeKey,
    graph: &CausalGraph,
    scan: &ScanResult,
    cache: &ContextCache,
    gateway: &LlmGateway,
    config: &RunConfig,
) -> Hypothesis {
    let suspicion = scan.suspicion_of(seed);
    let value = graph.value_of(seed).unwrap_or("?").to_string();
    let context = cache.lookup(&seed.signal);
    let prompt = prompts::hypothesis_prompt(
        &seed.signal,
        seed.cycle,
        &value,
        &rtl_context_text(&context),
        &spec_context_text(&context),
        &prior_analysis_text(scan, seed),
    );
    let tag = format!("rover.seed.{id}");
    let explored = BTreeSet::from([seed.clone()]);
    let mut frontier: Vec<NodeKey> = neighbors(graph, seed)
        .into_iter()
        .filter(|k| !explored.contains(k))
        .collect();
    order_frontier(&mut frontier, scan, graph, config.frontier_cap);

    let mut hypothesis = Hypothesis {
        id,
        seed: seed.clone(),
        seed_suspicion: suspicion,
        title: format!("Unseeded hypothesis for {seed}"),
        statement: String::new(),
        timeline: Vec::new(),
        evidence_for: Vec::new(),
        evidence_against: Vec::new(),
        insights: Vec::new(),
        confidence: 0.0,
        frontier,
        explored,
        status: HypothesisStatus::Unseeded,
        iterations_survived: 0,
    };
    let Ok(reply) = generate(gateway, config, &tag, prompt) else {
        return hypothesis;
    };
    let Some(value) = extract_json(&reply) else {
        return hypothesis;
    };
    let (Some(title), Some(statement)) = (
        value.get("title").and_then(|v| v.as_str()),
        value.get("hypothesis").and_then(|v| v.as_str()),
    ) else {
        return hypothesis;
    };
    hypothesis.title = title.to_string();
    hypothesis.statement = statement.to_string();
    hypothesis.insights = string_list(&value, "initial_insights");
    hypothesis.confidence = INITIAL_CONFIDENCE;
    hypothesis.status = HypothesisStatus::Active;
    hypothesis
}

/// Asks which frontier nodes to explore next. Lists at most ten frontier
/// nodes; replies outside the listing are dropped; an empty valid set (or any
/// failure) falls back to the single best frontier node.
pub fn select_targets(
    hypothesis: &Hypothesis,
    graph: &CausalGraph,
    gateway: &LlmGateway,
    config: &RunConfig,
    iteration: usize,
) -> Vec<NodeKey> {
    let listed: Vec<&NodeKey> =
        hypothesis.frontier.iter().take(config.frontier_listing_max).collect();
    let lines = listed
        .iter()
        .map(|k| format!("- {k}: {} = {}", k.signal, graph.value_of(k).unwrap_or("?")))
        .collect::<Vec<_>>()
        .join("\n");
    let prompt = prompts::select_prompt(
        &hypothesis.statement,
        hypothesis.confidence,
        hypothesis.timeline.len(),
        &lines,
    );
    let tag = format!("rover.select.{}.i{iteration}", hypothesis.id);
    let fallback = vec![hypothesis.frontier[0].clone()];
    let Ok(reply) = generate(gateway, config, &tag, prompt) else {
        return fallback;
    };
    let Some(value) = extract_json(&reply) else {
        return fallback;
    };
    let mut targets: Vec<NodeKey> = Vec::new();
    for text in string_list(&value, "targets") {
        let Ok(key) = text.parse::<NodeKey>() else { continue };
        if listed.iter().any(|l| **l == key) && !targets.contains(&key) {
            targets.push(key);
        }
    }
    targets.truncate(config.select_targets_max);
    if targets.is_empty() {
        return fallback;
    }
    targets
}

/// Explores one frontier node for a hypothesis. The node always moves to the
/// explored set; on a parseable, relevant analysis the timeline, evidence,
/// and confidence are updated; neighbors join the frontier unless the reply
/// was unusable.
#[allow(clippy::too_many_arguments)]
pub fn explore_step(
    hypothesis: &mut Hypothesis,
    target: &NodeKey,
    graph: &CausalGraph,
    scan: &ScanResult,
    cache: &ContextCache,
    gateway: &LlmGateway,
    config: &RunConfig,
    iteration: usize,
    target_index: usize,
) {
    hypothesis.frontier.retain(|k| k != target);
    hypothesis.explored.insert(target.clone());

    let value = graph.value_of(target).unwrap_or("?").to_string();
    let context = cache.lookup(&target.signal);
    let timeline_lines = render_timeline(&hypothesis.timeline);
    let prompt = prompts::analyze_prompt(
        &hypothesis.statement,
        &timeline_lines,
        &target.signal,
        target.cycle,
        &value,
        &rtl_context_text(&context),
        &prior_analysis_text(scan, target),
    );
    let tag = format!("rover.analyze.{}.i{iteration}.t{target_index}", hypothesis.id);
    let analysis = generate(gateway, config, &tag, prompt)
        .ok()
        .and_then(|reply| parse_analysis(&reply));
    let Some(analysis) = analysis else {
        return;
    };

    if analysis.is_relevant {
        insert_timeline_step(
            &mut hypothesis.timeline,
            TimelineStep {
                cycle: target.cycle,
                key: target.clone(),
                description: analysis.event_description.clone(),
            },
        );
        let added_for = merge_unique(&mut hypothesis.evidence_for, &analysis.evidence_for);
        let added_against =
            merge_unique(&mut hypothesis.evidence_against, &analysis.evidence_against);
        let sign = match added_for.cmp(&added_against) {
            std::cmp::Ordering::Greater => 1.0,
            std::cmp::Ordering::Less => -1.0,
            std::cmp::Ordering::Equal => 0.0,
        };
        let step = CONFIDENCE_STEP * analysis.importance * analysis.evidence_strength * sign;
        hypothesis.confidence = (hypothesis.confidence + step).clamp(0.0, 1.0);
    }
    merge_unique(&mut hypothesis.insights, &analysis.new_insights);

    for neighbor in neighbors(graph, target) {
        if !hypothesis.explored.contains(&neighbor) && !hypothesis.frontier.contains(&neighbor) {
            hypothesis.frontier.push(neighbor);
        }
    }
    order_frontier(&mut hypothesis.frontier, scan, graph, config.frontier_cap);
}

/// Parses a narrative analysis reply; returns None on any schema problem so
/// the caller can fall back to explored-marking only.
pub fn parse_analysis(reply: &str) -> Option<NarrativeAnalysis> {
    let value = extract_json(reply)?;
    let is_relevant = value.get("is_relevant")?.as_bool()?;
    let importance = match value.get("importance") {
        Some(_) => number_field(&value, "importance")?,
        None => 0.0,
    };
    let evidence_strength = match value.get("evidence_strength") {
        Some(_) => number_field(&value, "evidence_strength")?,
        None => 0.0,
    };
    if !(0.0..=1.0).contains(&importance) || !(0.0..=1.0).contains(&evidence_strength) {
        return None;
    }
    Some(NarrativeAnalysis {
        is_relevant,
        is_critical: value.get("is_critical").and_then(|v| v.as_bool()).unwrap_or(false),
        event_description: value
            .get("event_description")
            .and_then(|v| v.as_str())
            .unwrap_or("")
            .to_string(),
        importance,
        evidence_strength,
        evidence_for: string_list(&value, "evidence_for"),
        evidence_against: string_list(&value, "evidence_against"),
        new_insights: string_list(&value, "new_insights"),
    })
}

/// Final pool ranking. Batch mode scores every seeded hypothesis in one call
/// and recomputes the weighted overall locally; tournament mode merge-sorts
/// with pairwise duels. Any failure falls back to confidence ordering.
/// Unseeded hypotheses are appended with zero scores.
pub fn rank_hypotheses(
    pool: &[Hypothesis],
    gateway: &LlmGateway,
    config: &RunConfig,
    scenario: &str,
) -> Vec<RankedHypothesis> {
    let seeded: Vec<usize> = pool
        .iter()
        .enumerate()
        .filter(|(_, h)| h.status != HypothesisStatus::Unseeded)
        .map(|(i, _)| i)
        .collect();
    let mut ranking = match config.ranking_mode {
        RankingMode::Batch => rank_batch(pool, &seeded, gateway, config, scenario),
        RankingMode::Tournament => rank_tournament(pool, &seeded, gateway, config, scenario),
    };
    for (i, h) in pool.iter().enumerate() {
        if !seeded.contains(&i) {
            ranking.push(RankedHypothesis::from_criteria(
                h.id.clone(),
                [0.0; 5],
                "hypothesis was never seeded".to_string(),
            ));
        }
    }
    ranking
}

fn rank_batch(
    pool: &[Hypothesis],
    seeded: &[usize],
    gateway: &LlmGateway,
    config: &RunConfig,
    scenario: &str,
) -> Vec<RankedHypothesis> {
    if seeded.is_empty() {
        return Vec::new();
    }
    let blocks = seeded
        .iter()
        .enumerate()
        .map(|(i, &idx)| hypothesis_block(i + 1, &pool[idx]))
        .collect::<Vec<_>>()
        .join("\n---\n");
    let prompt = prompts::ranking_prompt(scenario, &blocks);
    let scored = generate(gateway, config, "rover.rank", prompt)
        .ok()
        .and_then(|reply| parse_rank_reply(&reply, pool, seeded));
    let entries = match scored {
        Some(entries) => entries,
        None => seeded
            .iter()
            .map(|&idx| {
                let h = &pool[idx];
                (
                    idx,
                    RankedHypothesis::from_criteria(
                        h.id.clone(),
                        [h.confidence; 5],
                        "ranked by exploration confidence".to_string(),
                    ),
                )
            })
            .collect(),
    };
    sort_ranked(entries, pool)
}

/// Extracts one valid criterion record per seeded hypothesis; None unless
/// every seeded hypothesis is covered with in-range scores.
fn parse_rank_reply(
    reply: &str,
    pool: &[Hypothesis],
    seeded: &[usize],
) -> Option<Vec<(usize, RankedHypothesis)>> {
    let value = extract_json(reply)?;
    let items = value.as_array()?;
    let mut by_id: BTreeMap<&str, &serde_json::Value> = BTreeMap::new();
    for item in items {
        if let Some(id) = item.get("hypothesis_id").and_then(|v| v.as_str()) {
            by_id.entry(id).or_insert(item);
        }
    }
    let mut entries = Vec::new();
    for &idx in seeded {
        let h = &pool[idx];
        let item = by_id.get(h.id.as_str())?;
        let mut criteria = [0.0f64; 5];
        for (slot, field) in criteria.iter_mut().zip([
            "sufficiency",
            "evidence",
            "mechanistic_insight",
            "actionability",
            "coherence",
        ]) {
            let score = number_field(item, field)?;
            if !(0.0..=1.0).contains(&score) {
                return None;
            }
            *slot = score;
        }
        let reasoning =
            item.get("reasoning").and_then(|v| v.as_str()).unwrap_or("").to_string();
        entries.push((idx, RankedHypothesis::from_criteria(h.id.clone(), criteria, reasoning)));
    }
    Some(entries)
}

/// Sorts by overall descending, ties by seed suspicion descending, then pool
/// position.
fn sort_ranked(
    mut entries: Vec<(usize, RankedHypothesis)>,
    pool: &[Hypothesis],
) -> Vec<RankedHypothesis> {
    entries.sort_by(|(ia, a), (ib, b)| {
        b.overall
            .total_cmp(&a.overall)
            .then(pool[*ib].seed_suspicion.total_cmp(&pool[*ia].seed_suspicion))
            .then(ia.cmp(ib))
    });
    entries.into_iter().map(|(_, e)| e).collect()
}

fn rank_tournament(
    pool: &[Hypothesis],
    seeded: &[usize],
    gateway: &LlmGateway,
    config: &RunConfig,
    scenario: &str,
) -> Vec<RankedHypothesis> {
    let mut order: Vec<usize> = seeded.to_vec();
    let n = order.len();
    if n > 1 {
        let mut duel =
            |a: &usize, b: &usize| duel_prefers_first(pool, *a, *b, gateway, config, scenario);
        merge_sort_by(&mut order, &mut duel);
    }
    let m = n.max(1) as f64;
    order
        .into_iter()
        .enumerate()
        .map(|(pos, idx)| {
            let score = (n - pos) as f64 / m;
            RankedHypothesis::from_criteria(
                pool[idx].id.clone(),
                [score; 5],
                format!("tournament position {}", pos + 1),
            )
        })
        .collect()
}

/// One duel: true when hypothesis `a` should rank above `b`. Failures fall
/// back to confidence, seed suspicion, then pool order.
fn duel_prefers_first(
    pool: &[Hypothesis],
    a: usize,
    b: usize,
    gateway: &LlmGateway,
    config: &RunConfig,
    scenario: &str,
) -> bool {
    let (ha, hb) = (&pool[a], &pool[b]);
    let prompt =
        prompts::duel_prompt(scenario, &hypothesis_block(1, ha), &hypothesis_block(2, hb));
    let tag = format!("rover.duel.{}.{}", ha.id, hb.id);
    let winner = generate(gateway, config, &tag, prompt)
        .ok()
        .and_then(|reply| extract_json(&reply))
        .and_then(|v| v.get("winner").and_then(|w| w.as_str()).map(str::to_string));
    match winner.as_deref() {
        Some("A") => true,
        Some("B") => false,
        _ => match ha.confidence.total_cmp(&hb.confidence) {
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Less => false,
            std::cmp::Ordering::Equal => {
                ha.seed_suspicion.total_cmp(&hb.seed_suspicion) != std::cmp::Ordering::Less
            }
        },
    }
}

/// Stable top-down merge sort issuing at most n*ceil(log2 n) comparisons.
/// `prefers_first(a, b)` keeps `a` ahead of `b` when true.
pub fn merge_sort_by<T: Clone>(items: &mut Vec<T>, prefers_first: &mut impl FnMut(&T, &T) -> bool) {
    let n = items.len();
    if n <= 1 {
        return;
    }
    let mid = n / 2;
    let mut left: Vec<T> = items[..mid].to_vec();
    let mut right: Vec<T> = items[mid..].to_vec();
    merge_sort_by(&mut left, prefers_first);
    merge_sort_by(&mut right, prefers_first);
    let (mut i, mut j) = (0, 0);
    let mut merged = Vec::with_capacity(n);
    while i < left.len() && j < right.len() {
        if prefers_first(&left[i], &right[j]) {
            merged.push(left[i].clone());
            i += 1;
        } else {
            merged.push(right[j].clone());
            j += 1;
        }
    }
    merged.extend_from_slice(&left[i..]);
    merged.extend_from_slice(&right[j..]);
    *items = merged;
}

/// Renders one hypothesis for ranking and duel prompts.
fn hypothesis_block(position: usize, h: &Hypothesis) -> String {
    let mut block = format!(
        "HYPOTHESIS #{position} (ID: {})\nTitle: {}\nStatement: {}\nStatus: {}\nConfidence: {:.3}\nSeed node: {} (suspicion {:.2})\n",
        h.id,
        h.title,
        h.statement,
        status_label(h.status),
        h.confidence,
        h.seed,
        h.seed_suspicion,
    );
    block.push_str("Timeline:\n");
    block.push_str(&render_timeline(&h.timeline));
    block.push('\n');
    push_fact_section(&mut block, "Evidence FOR", &h.evidence_for);
    push_fact_section(&mut block, "Evidence AGAINST", &h.evidence_against);
    push_fact_section(&mut block, "Insights", &h.insights);
    block
}

fn status_label(status: HypothesisStatus) -> &'static str {
    match status {
        HypothesisStatus::Active => "active",
        HypothesisStatus::Converged => "converged",
        HypothesisStatus::Weak => "weak",
        HypothesisStatus::Unseeded => "unseeded",
    }
}

fn push_fact_section(block: &mut String, label: &str, facts: &[String]) {
    block.push_str(&format!("{label} ({}):\n", facts.len()));
    if facts.is_empty() {
        block.push_str("- (none)\n");
    }
    for fact in facts {
        block.push_str(&format!("- {fact}\n"));
    }
}

fn render_timeline(timeline: &[TimelineStep]) -> String {
    if timeline.is_empty() {
        return "(empty)".to_string();
    }
    timeline
        .iter()
        .map(|s| format!("- cycle {}: {} [{}]", s.cycle, s.description, s.key))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Inserts a step keeping the timeline sorted by cycle; equal cycles keep
/// insertion order.
fn insert_timeline_step(timeline: &mut Vec<TimelineStep>, step: TimelineStep) {
    let position = timeline
        .iter()
        .position(|s| s.cycle > step.cycle)
        .unwrap_or(timeline.len());
    timeline.insert(position, step);
}

/// Appends facts not already present (exact text match, also deduplicating
/// within the addition); returns how many were actually added.
fn merge_unique(existing: &mut Vec<String>, additions: &[String]) -> usize {
    let mut added = 0;
    for fact in additions {
        if !existing.iter().any(|e| e == fact) {
            existing.push(fact.clone());
            added += 1;
        }
    }
    added
}

fn neighbors(graph: &CausalGraph, key: &NodeKey) -> Vec<NodeKey> {
    let mut out: Vec<NodeKey> = graph.causes_of(key).to_vec();
    for effect in graph.effects_of(key) {
        if !out.contains(effect) {
            out.push(effect.clone());
        }
    }
    out
}

/// Sorts a frontier by descending suspicion, descending degree, then key,
/// and truncates to the cap.
fn order_frontier(frontier: &mut Vec<NodeKey>, scan: &ScanResult, graph: &CausalGraph, cap: usize) {
    frontier.sort_by(|a, b| {
        scan.suspicion_of(b)
            .total_cmp(&scan.suspicion_of(a))
            .then(graph.degree(b).cmp(&graph.degree(a)))
            .then(a.cmp(b))
    });
    frontier.truncate(cap);
}

fn rtl_context_text(context: &cexroot_core::context::SignalContext) -> String {
    if context.rtl_snippets.is_empty() {
        return prompts::RTL_MISSING.to_string();
    }
    context
        .rtl_snippets
        .iter()
        .map(|s| format!("// {}:{}-{}\n{}", s.path, s.start_line, s.end_line, s.text))
        .collect::<Vec<_>>()
        .join("\n")
}

fn spec_context_text(context: &cexroot_core::context::SignalContext) -> String {
    if context.spec_excerpts.is_empty() {
        return prompts::NONE_PROVIDED.to_string();
    }
    context
        .spec_excerpts
        .iter()
        .map(|e| format!("[{}] {}", e.doc_id, e.text))
        .collect::<Vec<_>>()
        .join("\n")
}

fn prior_analysis_text(scan: &ScanResult, key: &NodeKey) -> String {
    scan.analyses
        .get(key)
        .map(|a| a.analysis_markdown.clone())
        .unwrap_or_else(|| prompts::NONE_PROVIDED.to_string())
}

fn generate(
    gateway: &LlmGateway,
    config: &RunConfig,
    tag: &str,
    prompt: String,
) -> Result<String, cexroot_core::gateway::GatewayError> {
    let mut request = GenerationRequest::new(tag, &prompt);
    request.temperature = config.temperature;
    request.max_output_tokens = config.max_output_tokens;
    gateway.generate(&request)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scanner::NodeAnalysis;
    use cexroot_core::context::prefetch;
    use cexroot_core::context::RtlCodeMap;
    use cexroot_core::gateway::{GatewayConfig, GatewayError};
    use cexroot_core::graph::{build_trace_tree, consolidate};
    use cexroot_core::oracle::{dump_from_records, CausalityDump, DumpEvent};
    use serde_json::json;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn key(text: &str) -> NodeKey {
        text.parse().unwrap()
    }

    // root p@3 <- a@2 <- b@1; a@2 also <- c@1; b@1 <- d@0.
    fn diamond_dump() -> CausalityDump {
        dump_from_records(
            "p@3",
            vec![
                DumpEvent { signal: "p".into(), cycle: 3, value: "FAIL".into(), parents: vec!["a@2".into()] },
                DumpEvent { signal: "a".into(), cycle: 2, value: "1'b0".into(), parents: vec!["b@1".into(), "c@1".into()] },
                DumpEvent { signal: "b".into(), cycle: 1, value: "1'b1".into(), parents: vec!["d@0".into()] },
                DumpEvent { signal: "c".into(), cycle: 1, value: "1'b0".into(), parents: vec![] },
                DumpEvent { signal: "d".into(), cycle: 0, value: "1'b0".into(), parents: vec![] },
            ],
        )
        .unwrap()
    }

    fn graph_of(dump: &CausalityDump) -> CausalGraph {
        consolidate(&build_trace_tree(dump, dump.root_event(), 20).unwrap()).unwrap()
    }

    fn analysis_for(key_text: &str, score: f64) -> (NodeKey, NodeAnalysis) {
        let k = key(key_text);
        (
            k.clone(),
            NodeAnalysis {
                node_key: k,
                is_suspicious: score >= 0.5,
                is_key_event: false,
                suspicion_score: score,
                importance_score: 0.5,
                causal_validity: BTreeMap::new(),
                analysis_markdown: "## Signal Behavior\nprior analysis text\n".to_string(),
            },
        )
    }

    fn scan_result(suspicious: &[&str], scored: &[(&str, f64)]) -> ScanResult {
        ScanResult {
            suspicious: suspicious.iter().map(|s| key(s)).collect(),
            analyses: scored.iter().map(|(k, s)| analysis_for(k, *s)).collect(),
            unanalyzed: vec![],
            batches_issued: 1,
        }
    }

    fn empty_cache() -> ContextCache {
        prefetch(&[], &RtlCodeMap::default(), &BTreeMap::new(), 0.7)
    }

    fn seed_reply(title: &str) -> String {
        json!({
            "title": title,
            "hypothesis": format!("{title}: something is wrong"),
            "initial_insights": ["starting point"],
        })
        .to_string()
    }

    fn scripted<F>(f: F) -> LlmGateway
    where
        F: Fn(&GenerationRequest) -> Result<String, GatewayError> + Send + Sync + 'static,
    {
        LlmGateway::scripted(f, GatewayConfig::default())
    }

    fn base_hypothesis(id: &str, seed: &str, confidence: f64) -> Hypothesis {
        Hypothesis {
            id: id.to_string(),
            seed: key(seed),
            seed_suspicion: 0.6,
            title: format!("theory {id}"),
            statement: format!("statement {id}"),
            timeline: vec![],
            evidence_for: vec![],
            evidence_against: vec![],
            insights: vec![],
            confidence,
            frontier: vec![],
            explored: BTreeSet::from([key(seed)]),
            status: HypothesisStatus::Active,
            iterations_survived: 0,
        }
    }

    #[test]
    fn seeding_initializes_frontier_by_suspicion_then_degree() {
        let dump = diamond_dump();
        let graph = graph_of(&dump);
        let scan = scan_result(&["a@2"], &[("a@2", 0.8), ("c@1", 0.6), ("b@1", 0.3)]);
        let gateway = scripted(|req| {
            assert!(req.prompt.contains("prior analysis text"));
            Ok(seed_reply("Theory A"))
        });
        let config = RunConfig::default();
        let h = seed_hypothesis("h1".into(), &key("a@2"), &graph, &scan, &empty_cache(), &gateway, &config);
        assert_eq!(h.status, HypothesisStatus::Active);
        assert_eq!(h.confidence, INITIAL_CONFIDENCE);
        assert_eq!(h.title, "Theory A");
        assert_eq!(h.insights, vec!["starting point".to_string()]);
        assert_eq!(h.explored, BTreeSet::from([key("a@2")]));
        // Neighbors of a@2: causes b@1 (susp .3), c@1 (susp .6), effect p@3 (susp 0).
        assert_eq!(h.frontier, vec![key("c@1"), key("b@1"), key("p@3")]);
    }

    #[test]
    fn seed_failure_yields_unseeded_slot() {
        let dump = diamond_dump();
        let graph = graph_of(&dump);
        let scan = scan_result(&["a@2"], &[("a@2", 0.8)]);
        let gateway = scripted(|_| Ok("I cannot help with that.".to_string()));
        let config = RunConfig::default();
        let h = seed_hypothesis("h1".into(), &key("a@2"), &graph, &scan, &empty_cache(), &gateway, &config);
        assert_eq!(h.status, HypothesisStatus::Unseeded);
        assert_eq!(h.confidence, 0.0);
    }

    #[test]
    fn selection_filters_to_listing_and_falls_back() {
        let dump = diamond_dump();
        let graph = graph_of(&dump);
        let config = RunConfig::default();
        let mut h = base_hypothesis("h1", "a@2", 0.5);
        h.frontier = vec![key("b@1"), key("c@1"), key("p@3")];

        let gateway = scripted(|req| {
            assert!(req.prompt.contains("- b@1: b = 1'b1"));
            Ok(json!({"targets": ["zz@9", "c@1", "b@1", "c@1"]}).to_string())
        });
        let targets = select_targets(&h, &graph, &gateway, &config, 1);
        assert_eq!(targets, vec![key("c@1"), key("b@1")], "order preserved, invalid and duplicate dropped");

        let gateway = scripted(|_| Ok(json!({"targets": ["zz@9"]}).to_string()));
        assert_eq!(select_targets(&h, &graph, &gateway, &config, 1), vec![key("b@1")]);

        let gateway = scripted(|_| Err(GatewayError::BudgetExceeded { tokens: 1, budget: 0 }));
        assert_eq!(select_targets(&h, &graph, &gateway, &config, 2), vec![key("b@1")]);
    }

    #[test]
    fn selection_lists_at_most_ten_nodes() {
        let events: Vec<DumpEvent> = (0..14)
            .map(|i| DumpEvent {
                signal: format!("s{i}"),
                cycle: 1,
                value: "1'b0".into(),
                parents: vec![],
            })
            .chain([DumpEvent {
                signal: "p".into(),
                cycle: 2,
                value: "FAIL".into(),
                parents: (0..14).map(|i| format!("s{i}@1")).collect(),
            }])
            .collect();
        let dump = dump_from_records("p@2", events).unwrap();
        let graph = graph_of(&dump);
        let config = RunConfig::default();
        let mut h = base_hypothesis("h1", "p@2", 0.5);
        h.frontier = (0..14).map(|i| key(&format!("s{i}@1"))).collect();
        let gateway = scripted(|req| {
            let listed = req.prompt.matches("\n- s").count();
            assert_eq!(listed, 10, "prompt must list exactly ten frontier nodes");
            Ok(json!({"targets": []}).to_string())
        });
        let targets = select_targets(&h, &graph, &gateway, &config, 1);
        assert_eq!(targets, vec![h.frontier[0].clone()]);
    }

    #[test]
    fn exploring_relevant_node_updates_everything() {
        let dump = diamond_dump();
        let graph = graph_of(&dump);
        let scan = scan_result(&["a@2"], &[("a@2", 0.8)]);
        let config = RunConfig::default();
        let mut h = base_hypothesis("h1", "a@2", 0.4);
        h.frontier = vec![key("b@1"), key("c@1")];
        h.timeline = vec![TimelineStep { cycle: 2, key: key("a@2"), description: "seed event".into() }];

        let gateway = scripted(|_| {
            Ok(json!({
                "is_relevant": true,
                "is_critical": true,
                "event_description": "b held low",
                "importance": 1.0,
                "evidence_strength": 0.5,
                "evidence_for": ["fact one", "fact one", "fact two"],
                "evidence_against": [],
                "new_insights": ["insight"],
            })
            .to_string())
        });
        explore_step(&mut h, &key("b@1"), &graph, &scan, &empty_cache(), &gateway, &config, 1, 1);

        assert!((h.confidence - 0.45).abs() < 1e-12, "0.4 + 0.1*1.0*0.5 = 0.45, got {}", h.confidence);
        assert_eq!(h.evidence_for, vec!["fact one".to_string(), "fact two".to_string()]);
        assert_eq!(h.timeline[0].key, key("b@1"), "cycle 1 sorts before the cycle 2 seed event");
        assert!(h.explored.contains(&key("b@1")));
        assert!(!h.frontier.contains(&key("b@1")));
        // Neighbors of b@1 are a@2 (explored) and d@0 (new).
        assert!(h.frontier.contains(&key("d@0")));
    }

    #[test]
    fn repeated_facts_leave_confidence_alone() {
        let dump = diamond_dump();
        let graph = graph_of(&dump);
        let scan = scan_result(&["a@2"], &[]);
        let config = RunConfig::default();
        let mut h = base_hypothesis("h1", "a@2", 0.5);
        h.frontier = vec![key("b@1")];
        h.evidence_for = vec!["already known".to_string()];
        let gateway = scripted(|_| {
            Ok(json!({
                "is_relevant": true,
                "event_description": "repeat",
                "importance": 1.0,
                "evidence_strength": 1.0,
                "evidence_for": ["already known"],
                "evidence_against": [],
            })
            .to_string())
        });
        explore_step(&mut h, &key("b@1"), &graph, &scan, &empty_cache(), &gateway, &config, 1, 1);
        assert_eq!(h.confidence, 0.5, "no new facts on either side, net sign zero");
    }

    #[test]
    fn net_negative_evidence_lowers_confidence_with_clamp() {
        let dump = diamond_dump();
        let graph = graph_of(&dump);
        let scan = scan_result(&["a@2"], &[]);
        let config = RunConfig::default();
        let mut h = base_hypothesis("h1", "a@2", 0.05);
        h.frontier = vec![key("b@1")];
        let gateway = scripted(|_| {
            Ok(json!({
                "is_relevant": true,
                "event_description": "contradiction",
                "importance": 1.0,
                "evidence_strength": 1.0,
                "evidence_for": [],
                "evidence_against": ["strong counter"],
            })
            .to_string())
        });
        explore_step(&mut h, &key("b@1"), &graph, &scan, &empty_cache(), &gateway, &config, 1, 1);
        assert_eq!(h.confidence, 0.0, "0.05 - 0.1 clamps at zero");
    }

    #[test]
    fn unparseable_analysis_only_marks_explored() {
        let dump = diamond_dump();
        let graph = graph_of(&dump);
        let scan = scan_result(&["a@2"], &[]);
        let config = RunConfig::default();
        let mut h = base_hypothesis("h1", "a@2", 0.5);
        h.frontier = vec![key("b@1"), key("c@1")];
        let before_frontier = vec![key("c@1")];
        let gateway = scripted(|_| Ok("no json".to_string()));
        explore_step(&mut h, &key("b@1"), &graph, &scan, &empty_cache(), &gateway, &config, 1, 1);
        assert_eq!(h.confidence, 0.5);
        assert!(h.timeline.is_empty());
        assert_eq!(h.frontier, before_frontier, "no neighbor expansion on a dead reply");
        assert!(h.explored.contains(&key("b@1")));
    }

    #[test]
    fn irrelevant_node_still_expands_frontier() {
        let dump = diamond_dump();
        let graph = graph_of(&dump);
        let scan = scan_result(&["a@2"], &[]);
        let config = RunConfig::default();
        let mut h = base_hypothesis("h1", "a@2", 0.5);
        h.frontier = vec![key("b@1")];
        let gateway = scripted(|_| {
            Ok(json!({"is_relevant": false, "importance": 0.1, "evidence_strength": 0.1}).to_string())
        });
        explore_step(&mut h, &key("b@1"), &graph, &scan, &empty_cache(), &gateway, &config, 1, 1);
        assert_eq!(h.confidence, 0.5);
        assert!(h.timeline.is_empty());
        assert!(h.frontier.contains(&key("d@0")), "neighbors still join the frontier");
    }

    #[test]
    fn analysis_with_out_of_range_fraction_is_rejected() {
        assert!(parse_analysis(&json!({"is_relevant": true, "importance": 1.5}).to_string()).is_none());
        assert!(parse_analysis(&json!({"importance": 0.5}).to_string()).is_none());
        let ok = parse_analysis(&json!({"is_relevant": false}).to_string()).unwrap();
        assert_eq!(ok.importance, 0.0);
        assert_eq!(ok.evidence_strength, 0.0);
    }

    #[test]
    fn barrier_marks_converged_and_weak() {
        let mut pool = vec![
            base_hypothesis("h1", "a@2", 0.92),
            base_hypothesis("h2", "b@1", 0.15),
            base_hypothesis("h3", "c@1", 0.15),
            base_hypothesis("h4", "d@0", 0.5),
        ];
        pool[1].iterations_survived = 2; // becomes 3 at this barrier
        pool[2].iterations_survived = 1; // only 2 after the barrier, stays active
        apply_barrier(&mut pool, &[0, 1, 2, 3], &RunConfig::default());
        assert_eq!(pool[0].status, HypothesisStatus::Converged);
        assert_eq!(pool[1].status, HypothesisStatus::Weak);
        assert_eq!(pool[2].status, HypothesisStatus::Active);
        assert_eq!(pool[3].status, HypothesisStatus::Active);
        assert_eq!(pool[3].iterations_survived, 1);
    }

    #[test]
    fn batch_ranking_recomputes_weighted_overall() {
        let config = RunConfig::default();
        let mut pool = vec![base_hypothesis("h1", "a@2", 0.47), base_hypothesis("h2", "b@1", 0.54)];
        pool[0].seed_suspicion = 0.55;
        pool[1].seed_suspicion = 0.70;
        let gateway = scripted(|req| {
            assert_eq!(req.tag, "rover.rank");
            assert!(req.prompt.contains("HYPOTHESIS #1 (ID: h1)"));
            Ok(json!([
                {"hypothesis_id": "h1", "sufficiency": 0.85, "evidence": 0.90,
                 "mechanistic_insight": 0.80, "actionability": 0.75, "coherence": 0.95,
                 "overall_score": 0.1, "reasoning": "complete chain"},
                {"hypothesis_id": "h2", "sufficiency": 0.80, "evidence": 0.85,
                 "mechanistic_insight": 0.75, "actionability": 0.70, "coherence": 0.90,
                 "reasoning": "good but shallower"},
            ])
            .to_string())
        });
        let ranking = rank_hypotheses(&pool, &gateway, &config, "scenario");
        assert_eq!(ranking.len(), 2);
        assert_eq!(ranking[0].hypothesis_id, "h1");
        assert!((ranking[0].overall - 0.84).abs() < 1e-9, "model overall_score must be ignored");
        assert!((ranking[1].overall - 0.79).abs() < 1e-9);
        assert_eq!(ranking[0].reasoning, "complete chain");
    }

    #[test]
    fn ranking_falls_back_to_confidence_order() {
        let config = RunConfig::default();
        let mut pool = vec![base_hypothesis("h1", "a@2", 0.47), base_hypothesis("h2", "b@1", 0.54)];
        pool[1].status = HypothesisStatus::Converged;
        let gateway = scripted(|_| Ok("sorry, no scores".to_string()));
        let ranking = rank_hypotheses(&pool, &gateway, &config, "scenario");
        assert_eq!(ranking[0].hypothesis_id, "h2");
        assert_eq!(ranking[0].sufficiency, 0.54);
        assert!((ranking[0].overall - 0.54).abs() < 1e-9, "weights sum to one");
        assert_eq!(ranking[1].hypothesis_id, "h1");
    }

    #[test]
    fn missing_rank_entry_discards_the_whole_reply() {
        let config = RunConfig::default();
        let pool = vec![base_hypothesis("h1", "a@2", 0.3), base_hypothesis("h2", "b@1", 0.6)];
        let gateway = scripted(|_| {
            Ok(json!([
                {"hypothesis_id": "h1", "sufficiency": 0.9, "evidence": 0.9,
                 "mechanistic_insight": 0.9, "actionability": 0.9, "coherence": 0.9},
            ])
            .to_string())
        });
        let ranking = rank_hypotheses(&pool, &gateway, &config, "scenario");
        assert_eq!(ranking[0].hypothesis_id, "h2", "fallback ordering by confidence");
        assert_eq!(ranking[0].sufficiency, 0.6);
    }

    #[test]
    fn unseeded_hypotheses_rank_last_with_zero_scores() {
        let config = RunConfig::default();
        let mut pool = vec![base_hypothesis("h1", "a@2", 0.5), base_hypothesis("h2", "b@1", 0.0)];
        pool[1].status = HypothesisStatus::Unseeded;
        let gateway = scripted(|_| Ok("garbage".to_string()));
        let ranking = rank_hypotheses(&pool, &gateway, &config, "scenario");
        assert_eq!(ranking.len(), 2);
        assert_eq!(ranking[1].hypothesis_id, "h2");
        assert_eq!(ranking[1].overall, 0.0);
        assert_eq!(ranking[1].reasoning, "hypothesis was never seeded");
    }

    #[test]
    fn tournament_orders_by_duels_within_comparison_budget() {
        let mut config = RunConfig::default();
        config.ranking_mode = RankingMode::Tournament;
        let pool: Vec<Hypothesis> = (0..5)
            .map(|i| base_hypothesis(&format!("h{}", i + 1), &format!("s{i}@1"), 0.5))
            .collect();
        let duels = Arc::new(AtomicUsize::new(0));
        let counter = duels.clone();
        // Ground truth: higher hypothesis number wins every duel.
        let gateway = scripted(move |req| {
            assert!(req.tag.starts_with("rover.duel."));
            counter.fetch_add(1, Ordering::SeqCst);
            let ids: Vec<u32> = req
                .tag
                .trim_start_matches("rover.duel.")
                .split('.')
                .map(|p| p.trim_start_matches('h').parse().unwrap())
                .collect();
            let winner = if ids[0] > ids[1] { "A" } else { "B" };
            Ok(json!({"winner": winner}).to_string())
        });
        let ranking = rank_hypotheses(&pool, &gateway, &config, "scenario");
        let order: Vec<&str> = ranking.iter().map(|r| r.hypothesis_id.as_str()).collect();
        assert_eq!(order, vec!["h5", "h4", "h3", "h2", "h1"]);
        assert!(duels.load(Ordering::SeqCst) <= 5 * 3, "n ceil(log2 n) duel budget");
        let overalls: Vec<f64> = ranking.iter().map(|r| r.overall).collect();
        assert!(overalls.windows(2).all(|w| w[0] > w[1]), "synthetic scores strictly descend");
        assert!((ranking[0].overall - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rove_requires_suspicious_nodes() {
        let dump = diamond_dump();
        let graph = graph_of(&dump);
        let scan = scan_result(&[], &[]);
        let gateway = scripted(|_| Ok("unused".to_string()));
        let config = RunConfig::default();
        let err = rove(&graph, &scan, &empty_cache(), &gateway, &config, "");
        assert!(matches!(err, Err(RoverError::NoSuspiciousNodes)));
    }

    #[test]
    fn rove_explores_until_frontiers_drain() {
        let dump = diamond_dump();
        let graph = graph_of(&dump);
        let scan = scan_result(&["a@2"], &[("a@2", 0.8)]);
        let config = RunConfig::default();
        let gateway = scripted(|req| {
            if req.tag.starts_with("rover.seed") {
                Ok(seed_reply("Theory A"))
            } else if req.tag.starts_with("rover.select") {
                // Always take everything listed, up to the 3-target cap.
                let targets: Vec<&str> = req
                    .prompt
                    .lines()
                    .filter(|l| l.starts_with("- "))
                    .map(|l| l[2..].split(':').next().unwrap())
                    .collect();
                Ok(json!({"targets": targets}).to_string())
            } else if req.tag.starts_with("rover.analyze") {
                Ok(json!({"is_relevant": false, "importance": 0.0, "evidence_strength": 0.0}).to_string())
            } else {
                Ok("garbage".to_string())
            }
        });
        let outcome = rove(&graph, &scan, &empty_cache(), &gateway, &config, "scn").unwrap();
        assert_eq!(outcome.hypotheses.len(), 1);
        let h = &outcome.hypotheses[0];
        assert!(h.frontier.is_empty(), "all reachable nodes explored");
        assert_eq!(h.explored.len(), 5, "whole graph visited from the seed");
        assert!(outcome.iterations < config.max_iterations, "loop stops once frontiers drain");
        assert_eq!(outcome.ranking.len(), 1);
        assert_eq!(outcome.ranking[0].hypothesis_id, "h1");
    }

    #[test]
    fn rove_refills_active_slots_from_unseeded_suspicious() {
        let dump = diamond_dump();
        let graph = graph_of(&dump);
        let scan = scan_result(
            &["a@2", "c@1", "b@1"],
            &[("a@2", 0.9), ("c@1", 0.8), ("b@1", 0.7)],
        );
        let mut config = RunConfig::default();
        config.active_narratives = Some(1);
        let gateway = scripted(|req| {
            if req.tag.starts_with("rover.seed") {
                Ok(seed_reply("T"))
            } else if req.tag.starts_with("rover.select") {
                Ok(json!({"targets": []}).to_string())
            } else if req.tag.starts_with("rover.analyze") {
                // Strong counterevidence drives any hypothesis weak by its
                // third barrier (0.5 - 3*0.1 < 0.2).
                Ok(json!({
                    "is_relevant": true,
                    "event_description": "setback",
                    "importance": 1.0,
                    "evidence_strength": 1.0,
                    "evidence_for": [],
                    "evidence_against": [format!("fact against {}", req.tag)],
                })
                .to_string())
            } else {
                Ok("garbage".to_string())
            }
        });
        let outcome = rove(&graph, &scan, &empty_cache(), &gateway, &config, "").unwrap();
        assert!(outcome.hypotheses.len() >= 2, "vacated slot must be refilled");
        assert_eq!(outcome.hypotheses[0].status, HypothesisStatus::Weak);
        assert_eq!(outcome.hypotheses[0].seed, key("a@2"));
        assert_eq!(outcome.hypotheses[1].seed, key("c@1"), "highest-suspicion unseeded first");
    }

    #[test]
    fn explored_stays_within_iteration_budget() {
        let dump = diamond_dump();
        let graph = graph_of(&dump);
        let scan = scan_result(&["a@2"], &[("a@2", 0.8)]);
        let config = RunConfig::default();
        let gateway = scripted(|req| {
            if req.tag.starts_with("rover.seed") {
                Ok(seed_reply("T"))
            } else if req.tag.starts_with("rover.select") {
                Ok(json!({"targets": []}).to_string())
            } else if req.tag.starts_with("rover.analyze") {
                Ok(json!({"is_relevant": false}).to_string())
            } else {
                Ok("garbage".to_string())
            }
        });
        let outcome = rove(&graph, &scan, &empty_cache(), &gateway, &config, "").unwrap();
        for h in &outcome.hypotheses {
            assert!(h.explored.len() <= 1 + config.max_iterations * config.select_targets_max);
            assert!(h.frontier.iter().all(|k| !h.explored.contains(k)), "frontier and explored stay disjoint");
        }
    }

    #[test]
    fn outcome_round_trips_through_json() {
        let mut h = base_hypothesis("h1", "a@2", 0.6);
        h.timeline = vec![TimelineStep { cycle: 1, key: key("b@1"), description: "step".into() }];
        h.frontier = vec![key("c@1")];
        let outcome = RoverOutcome {
            hypotheses: vec![h],
            ranking: vec![RankedHypothesis::from_criteria("h1".into(), [0.5; 5], "r".into())],
            iterations: 3,
        };
        let text = serde_json::to_string(&outcome).unwrap();
        let back: RoverOutcome = serde_json::from_str(&text).unwrap();
        assert_eq!(outcome, back);
    }
}
