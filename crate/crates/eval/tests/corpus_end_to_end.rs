//! Records a miniature benchmark problem once through a scripted gateway,
//! then evaluates it twice from the saved cassette and checks the scores
//! and their determinism.

use std::collections::BTreeMap;
use std::path::Path;

use cexroot_core::config::RunConfig;
use cexroot_core::context::{prefetch, RtlCodeMap};
use cexroot_core::gateway::LlmGateway;
use cexroot_core::graph::{build_trace_tree, consolidate};
use cexroot_core::oracle::load_dump;
use cexroot_eval::corpus::{evaluate_problem, hypothesis_presentation, ProblemPaths};
use cexroot_eval::judge::judge_hypothesis;
use cexroot_pipeline::fixgen::{ensemble, FixBundle};
use cexroot_pipeline::rover::rove;
use cexroot_pipeline::scanner::scan;
use serde_json::json;

const BUGGY: &str = "assign p = a | b;";
const FIXED: &str = "assign p = a & b;";

fn scan_entry(suspicious: bool, score: f64) -> serde_json::Value {
    json!({
        "is_suspicious": suspicious,
        "is_key_event": false,
        "suspicion_score": score,
        "importance_score": 0.5,
        "causal_validity": {},
        "analysis": "## Signal Behavior\nObserved.\n\n## Arguments FOR Being Suspicious (REQUIRED - MIN 2)\n- or gate wrong\n- never rises\n\n## Arguments AGAINST Being Suspicious (REQUIRED - MIN 2)\n- could be intended\n- upstream culprit\n\n## Fix Required\nUse an and gate.\n",
    })
}

fn fix_reply() -> String {
    json!({
        "category": "RTL Bug",
        "fixes": [{
            "buggy_code": BUGGY,
            "code": FIXED,
            "description": "use an and gate",
            "confidence": 0.8,
            "location": {"module": "mini", "signal": "p", "file": "mini.sv", "line": 2},
        }],
    })
    .to_string()
}

fn scripted_reply(tag: &str) -> String {
    match tag {
        "scan.b001" => json!({"n1": scan_entry(true, 0.8)}).to_string(),
        "scan.b002" => json!({"n1": scan_entry(false, 0.1)}).to_string(),
        "rover.seed.h1" => json!({
            "title": "Wrong gate feeding p",
            "hypothesis": "the or gate keeps p failing",
            "initial_insights": ["p depends on a"],
        })
        .to_string(),
        "rover.select.h1.i1" => json!({"targets": ["p@1"]}).to_string(),
        "rover.analyze.h1.i1.t1" => {
            json!({"is_relevant": false, "importance": 0.0, "evidence_strength": 0.0}).to_string()
        }
        "rover.rank" => json!([{
            "hypothesis_id": "h1",
            "sufficiency": 0.9, "evidence": 0.9, "mechanistic_insight": 0.9,
            "actionability": 0.9, "coherence": 0.9,
            "reasoning": "only candidate",
        }])
        .to_string(),
        tag if tag.starts_with("fix.") => fix_reply(),
        "eval.judge.1" => json!({
            "relevance": 0.9, "preciseness": 0.8, "causal_timeline": 0.7, "correctness": 0.6,
        })
        .to_string(),
        other => panic!("unexpected tag {other}"),
    }
}

fn write_problem(dir: &Path) -> ProblemPaths {
    std::fs::create_dir_all(dir.join("rtl")).unwrap();
    std::fs::create_dir_all(dir.join("spec")).unwrap();
    std::fs::write(
        dir.join("dump.json"),
        json!({
            "root": "p@1",
            "events": [
                {"signal": "p", "cycle": 1, "value": "FAIL", "parents": ["a@0"]},
                {"signal": "a", "cycle": 0, "value": "1'b0", "parents": []},
            ],
        })
        .to_string(),
    )
    .unwrap();
    std::fs::write(dir.join("rtl/mini.sv"), format!("module mini;\n    {BUGGY}\nendmodule\n"))
        .unwrap();
    std::fs::write(dir.join("spec/mini.md"), "The p output must stay high.\n").unwrap();
    std::fs::write(dir.join("scenario.txt"), "p fails at cycle 1\n").unwrap();
    std::fs::write(dir.join("golden.txt"), "the or gate should be an and gate\n").unwrap();
    std::fs::write(
        dir.join("verifier.json"),
        json!({"mock": {"outcomes": [{"buggy_code": BUGGY, "code": FIXED, "outcome": "pass"}]}})
            .to_string(),
    )
    .unwrap();
    ProblemPaths::in_dir(dir)
}

/// Mirrors the stages evaluate_problem drives, but against a recording
/// scripted gateway, and saves the cassette it produces.
fn record_cassette(paths: &ProblemPaths, config: &RunConfig) {
    let dump = load_dump(&paths.dump).unwrap();
    let tree = build_trace_tree(&dump, dump.root_event(), config.depth_limit).unwrap();
    let graph = consolidate(&tree).unwrap();
    let rtl = RtlCodeMap::load(&paths.rtl_dir).unwrap();
    let docs: BTreeMap<String, String> = BTreeMap::from([(
        "mini.md".to_string(),
        std::fs::read_to_string(paths.spec_dir.join("mini.md")).unwrap(),
    )]);
    let signals: Vec<String> = vec!["a".to_string(), "p".to_string()];
    let cache = prefetch(&signals, &rtl, &docs, config.fuzzy_threshold);
    let scenario = std::fs::read_to_string(&paths.scenario).unwrap();
    let golden = std::fs::read_to_string(&paths.golden).unwrap();

    let gateway = LlmGateway::scripted(
        |request| Ok(scripted_reply(&request.tag)),
        config.gateway_config(),
    )
    .with_recording();

    let scan_result = scan(&graph, &cache, &gateway, config, &scenario).unwrap();
    assert_eq!(scan_result.suspicious.len(), 1, "only a@0 flagged");
    let rover = rove(&graph, &scan_result, &cache, &gateway, config, &scenario).unwrap();
    assert_eq!(rover.ranking.len(), 1);
    let bundle = FixBundle { scenario: &scenario, rtl: &rtl, scan: &scan_result, rover: &rover };
    let fixes = ensemble(&bundle, &gateway, config).unwrap();
    assert_eq!(fixes.len(), 1, "all six strategies merge into one fix");
    assert_eq!(fixes[0].final_confidence, 1.0, "0.8 plus the capped 0.6 boost");

    let presentation = hypothesis_presentation(&rover.hypotheses[0]);
    let judged =
        judge_hypothesis(&presentation, &golden, 1, &scenario, &gateway, config).unwrap();
    assert!((judged.overall - 0.75).abs() < 1e-12);

    gateway.recorded().save(&paths.cassette).unwrap();
}

#[test]
fn recorded_problem_replays_to_stable_scores() {
    let dir = tempfile::tempdir().unwrap();
    let problem_dir = dir.path().join("mini");
    let paths = write_problem(&problem_dir);
    let config = RunConfig::default();
    record_cassette(&paths, &config);

    let first = evaluate_problem(&paths, &config).unwrap();
    assert_eq!(first.problem, "mini");
    assert!((first.quality_at_best.unwrap() - 0.75).abs() < 1e-12);
    assert_eq!(first.ndcg_at_5, Some(1.0), "single judged hypothesis is trivially ideal");
    assert_eq!(first.mrr, Some(1.0));
    assert_eq!(first.kendall_tau, None, "one item cannot correlate");
    assert_eq!(first.pass_at_1, Some(true));
    assert_eq!(first.pass_at_5, Some(true));
    assert_eq!(first.judge_failures, 0);

    let second = evaluate_problem(&paths, &config).unwrap();
    assert_eq!(first, second, "replay must be deterministic");
}

#[test]
fn problem_without_verifier_skips_pass_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let problem_dir = dir.path().join("mini");
    let paths = write_problem(&problem_dir);
    let config = RunConfig::default();
    record_cassette(&paths, &config);
    std::fs::remove_file(&paths.verifier).unwrap();

    let scores = evaluate_problem(&paths, &config).unwrap();
    assert_eq!(scores.pass_at_1, None);
    assert_eq!(scores.pass_at_5, None);
    assert!((scores.quality_at_best.unwrap() - 0.75).abs() < 1e-12, "judging is unaffected");
}
