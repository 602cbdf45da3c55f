//! Benchmark corpus harness: problem discovery, per-problem evaluation
//! under cassette replay, and the results table.
//!
//! A problem is a directory holding `dump.json`, an `rtl/` tree, a `spec/`
//! tree, `scenario.txt`, `golden.txt`, `verifier.json`, and `cassette.txt`.
//! Evaluation replays the cassette through the full pipeline, judges every
//! ranked hypothesis against the golden answer, and scores the ranking and
//! the fixes.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use cexroot_core::config::RunConfig;
use cexroot_core::context::{load_spec_docs, prefetch, ContextError, RtlCodeMap};
use cexroot_core::gateway::{Cassette, LlmGateway};
use cexroot_core::graph::{build_trace_tree, consolidate};
use cexroot_core::oracle::load_dump;
use cexroot_pipeline::fixgen::{ensemble, Fix, FixBundle};
use cexroot_pipeline::rover::{rove, Hypothesis, HypothesisStatus, RoverOutcome};
use cexroot_pipeline::scanner::scan;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::judge::judge_hypothesis;
use crate::metrics::{kendall_tau, mean, mrr, ndcg_at_k, quality_at_best, rate};
use crate::verify::{load_verifier, pass_at_k};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("corpus {0} contains no problem directories")]
    EmptyCorpus(String),
    #[error("corpus {path}: {message}")]
    Corpus { path: String, message: String },
    #[error("problem {problem}: missing input {path}")]
    MissingInput { problem: String, path: String },
    #[error("problem {problem}: {stage} failed: {message}")]
    Stage { problem: String, stage: &'static str, message: String },
}

/// Input file locations for one benchmark problem.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProblemPaths {
    pub id: String,
    pub dump: PathBuf,
    pub rtl_dir: PathBuf,
    pub spec_dir: PathBuf,
    pub scenario: PathBuf,
    pub golden: PathBuf,
    pub verifier: PathBuf,
    pub cassette: PathBuf,
}

impl ProblemPaths {
    /// Standard layout under one problem directory.
    pub fn in_dir(dir: &Path) -> Self {
        let id = dir
            .file_name()
            .map(|name| name.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        Self {
            id,
            dump: dir.join("dump.json"),
            rtl_dir: dir.join("rtl"),
            spec_dir: dir.join("spec"),
            scenario: dir.join("scenario.txt"),
            golden: dir.join("golden.txt"),
            verifier: dir.join("verifier.json"),
            cassette: dir.join("cassette.txt"),
        }
    }
}

/// Per-problem metric row. Missing values come from degenerate rankings,
/// absent verifier tables, or fully unjudgeable hypothesis sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemScores {
    pub problem: String,
    pub quality_at_best: Option<f64>,
    pub ndcg_at_5: Option<f64>,
    pub mrr: Option<f64>,
    pub kendall_tau: Option<f64>,
    pub pass_at_1: Option<bool>,
    pub pass_at_5: Option<bool>,
    /// Hypotheses whose judge reply failed to parse; excluded from the
    /// metrics above.
    pub judge_failures: usize,
}

/// Subdirectories of `corpus_dir` that look like problems, sorted by name.
pub fn find_problems(corpus_dir: &Path) -> Result<Vec<ProblemPaths>, EvalError> {
    let corpus_error = |message: String| EvalError::Corpus {
        path: corpus_dir.display().to_string(),
        message,
    };
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(corpus_dir)
        .map_err(|e| corpus_error(e.to_string()))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|path| path.is_dir() && path.join("dump.json").is_file())
        .collect();
    dirs.sort();
    Ok(dirs.iter().map(|dir| ProblemPaths::in_dir(dir)).collect())
}

/// Evaluates every problem in the corpus sequentially, in name order.
pub fn evaluate_corpus(
    corpus_dir: &Path,
    config: &RunConfig,
) -> Result<Vec<ProblemScores>, EvalError> {
    let problems = find_problems(corpus_dir)?;
    if problems.is_empty() {
        return Err(EvalError::EmptyCorpus(corpus_dir.display().to_string()));
    }
    problems.iter().map(|paths| evaluate_problem(paths, config)).collect()
}

/// Replays one problem through graph build, scan, exploration, fix
/// generation, and judging, then scores it.
pub fn evaluate_problem(
    paths: &ProblemPaths,
    config: &RunConfig,
) -> Result<ProblemScores, EvalError> {
    let stage = |stage: &'static str| {
        let problem = paths.id.clone();
        move |message: String| EvalError::Stage { problem, stage, message }
    };
    let read_text = |path: &Path| -> Result<String, EvalError> {
        std::fs::read_to_string(path).map_err(|_| EvalError::MissingInput {
            problem: paths.id.clone(),
            path: path.display().to_string(),
        })
    };

    let dump = load_dump(&paths.dump).map_err(|e| stage("dump")(e.to_string()))?;
    let tree = build_trace_tree(&dump, dump.root_event(), config.depth_limit)
        .map_err(|e| stage("graph")(e.to_string()))?;
    let graph = consolidate(&tree).map_err(|e| stage("graph")(e.to_string()))?;

    let rtl = RtlCodeMap::load(&paths.rtl_dir).map_err(|e| stage("rtl")(e.to_string()))?;
    let docs = load_docs(&paths.spec_dir).map_err(|e| stage("spec")(e.to_string()))?;
    let signals: Vec<String> = graph
        .keys()
        .map(|key| key.signal.clone())
        .collect::<BTreeSet<String>>()
        .into_iter()
        .collect();
    let cache = prefetch(&signals, &rtl, &docs, config.fuzzy_threshold);

    let scenario = read_text(&paths.scenario)?;
    let golden = read_text(&paths.golden)?;
    let cassette =
        Cassette::load(&paths.cassette).map_err(|e| stage("cassette")(e.to_string()))?;
    let gateway = LlmGateway::replay(cassette, config.gateway_config());

    let scan_result = scan(&graph, &cache, &gateway, config, &scenario)
        .map_err(|e| stage("scan")(e.to_string()))?;
    let rover = rove(&graph, &scan_result, &cache, &gateway, config, &scenario)
        .map_err(|e| stage("rover")(e.to_string()))?;
    let bundle = FixBundle { scenario: &scenario, rtl: &rtl, scan: &scan_result, rover: &rover };
    // Fix generation failing outright (nothing parseable or validatable on
    // this cassette) scores as zero fixes rather than aborting the problem.
    let fixes = ensemble(&bundle, &gateway, config).unwrap_or_default();

    let (system_overalls, judged_overalls, judge_failures) =
        judge_ranking(&rover, &golden, &scenario, &gateway, config);
    let (pass_at_1, pass_at_5) = pass_metrics(paths, &fixes)?;

    Ok(score_problem(
        &paths.id,
        &system_overalls,
        &judged_overalls,
        judge_failures,
        pass_at_1,
        pass_at_5,
        config,
    ))
}

/// Judges every seeded ranked hypothesis; returns paired system and judged
/// overalls in ranking order plus the count of unjudgeable hypotheses.
fn judge_ranking(
    rover: &RoverOutcome,
    golden: &str,
    scenario: &str,
    gateway: &LlmGateway,
    config: &RunConfig,
) -> (Vec<f64>, Vec<f64>, usize) {
    let mut system = Vec::new();
    let mut judged = Vec::new();
    let mut failures = 0usize;
    for (index, ranked) in rover.ranking.iter().enumerate() {
        let Some(hypothesis) = rover
            .hypotheses
            .iter()
            .find(|h| h.id == ranked.hypothesis_id && h.status != HypothesisStatus::Unseeded)
        else {
            continue;
        };
        let presentation = hypothesis_presentation(hypothesis);
        match judge_hypothesis(&presentation, golden, index + 1, scenario, gateway, config) {
            Ok(scores) => {
                system.push(ranked.overall);
                judged.push(scores.overall);
            }
            Err(_) => failures += 1,
        }
    }
    (system, judged, failures)
}

fn pass_metrics(
    paths: &ProblemPaths,
    fixes: &[Fix],
) -> Result<(Option<bool>, Option<bool>), EvalError> {
    if !paths.verifier.is_file() {
        return Ok((None, None));
    }
    let verifier = load_verifier(&paths.verifier)
        .map_err(|e| EvalError::Stage {
            problem: paths.id.clone(),
            stage: "verifier",
            message: e.to_string(),
        })?;
    let run = |k: usize| -> Result<bool, EvalError> {
        pass_at_k(fixes, verifier.as_ref(), k, &paths.rtl_dir)
            .map(|report| report.passed)
            .map_err(|e| EvalError::Stage {
                problem: paths.id.clone(),
                stage: "pass@k",
                message: e.to_string(),
            })
    };
    Ok((Some(run(1)?), Some(run(5)?)))
}

fn score_problem(
    problem: &str,
    system_overalls: &[f64],
    judged_overalls: &[f64],
    judge_failures: usize,
    pass_at_1: Option<bool>,
    pass_at_5: Option<bool>,
    config: &RunConfig,
) -> ProblemScores {
    let have_judgments = !judged_overalls.is_empty();
    ProblemScores {
        problem: problem.to_string(),
        quality_at_best: quality_at_best(judged_overalls),
        ndcg_at_5: have_judgments
            .then(|| ndcg_at_k(judged_overalls, 5, config.ndcg_gain)),
        mrr: have_judgments.then(|| mrr(judged_overalls, config.mrr_threshold)),
        kendall_tau: kendall_tau_or_missing(system_overalls, judged_overalls),
        pass_at_1,
        pass_at_5,
        judge_failures,
    }
}

fn kendall_tau_or_missing(system: &[f64], judged: &[f64]) -> Option<f64> {
    if system.len() < 2 {
        return None;
    }
    kendall_tau(system, judged).ok()
}

/// Text shown to the judge for one hypothesis: title, statement, timeline,
/// and evidence, rendered deterministically.
pub fn hypothesis_presentation(hypothesis: &Hypothesis) -> String {
    let mut text = String::new();
    if !hypothesis.title.is_empty() {
        text.push_str(&hypothesis.title);
        text.push_str("\n\n");
    }
    text.push_str(&hypothesis.statement);
    if !hypothesis.timeline.is_empty() {
        text.push_str("\n\nCausal timeline:\n");
        for step in &hypothesis.timeline {
            text.push_str(&format!(
                "- cycle {}: {} [{}]\n",
                step.cycle, step.description, step.key
            ));
        }
    }
    render_bullets(&mut text, "Evidence for", &hypothesis.evidence_for);
    render_bullets(&mut text, "Evidence against", &hypothesis.evidence_against);
    render_bullets(&mut text, "Key insights", &hypothesis.insights);
    text
}

fn render_bullets(text: &mut String, heading: &str, bullets: &[String]) {
    if bullets.is_empty() {
        return;
    }
    text.push_str(&format!("\n{heading}:\n"));
    for bullet in bullets {
        text.push_str(&format!("- {bullet}\n"));
    }
}

/// Results table matching the headline metric columns, one row per problem
/// plus an aggregate row of means. Missing values render as empty cells;
/// per-problem pass flags render as 1/0 and aggregate to a rate.
pub fn results_csv(rows: &[ProblemScores]) -> String {
    let mut out = String::from("Problem,Quality@Best,NDCG@5,MRR,Kendall's tau,Pass@1,Pass@5\n");
    let fraction = |value: Option<f64>| value.map_or(String::new(), |v| format!("{v:.4}"));
    let flag = |value: Option<bool>| {
        value.map_or(String::new(), |v| if v { "1".to_string() } else { "0".to_string() })
    };
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.problem,
            fraction(row.quality_at_best),
            fraction(row.ndcg_at_5),
            fraction(row.mrr),
            fraction(row.kendall_tau),
            flag(row.pass_at_1),
            flag(row.pass_at_5),
        ));
    }
    let collect = |pick: fn(&ProblemScores) -> Option<f64>| -> Vec<f64> {
        rows.iter().filter_map(pick).collect()
    };
    let pass_rate = |pick: fn(&ProblemScores) -> Option<bool>| -> Option<f64> {
        let flags: Vec<bool> = rows.iter().filter_map(pick).collect();
        rate(&flags)
    };
    out.push_str(&format!(
        "aggregate,{},{},{},{},{},{}\n",
        fraction(mean(&collect(|r| r.quality_at_best))),
        fraction(mean(&collect(|r| r.ndcg_at_5))),
        fraction(mean(&collect(|r| r.mrr))),
        fraction(mean(&collect(|r| r.kendall_tau))),
        fraction(pass_rate(|r| r.pass_at_1)),
        fraction(pass_rate(|r| r.pass_at_5)),
    ));
    out
}

/// Spec documents are optional; a missing directory reads as no docs.
fn load_docs(dir: &Path) -> Result<BTreeMap<String, String>, ContextError> {
    if dir.is_dir() {
        load_spec_docs(dir)
    } else {
        Ok(BTreeMap::new())
    }
}
