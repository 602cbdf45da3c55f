//! Stage drivers and artifact plumbing.
//!
//! Every stage reads its inputs from the artifacts in `--out-dir` written by
//! the stage before it and writes its own, so `run` is literally the
//! standalone subcommands executed back to back; under replay the two paths
//! produce byte-identical files. Each gateway-using stage also records how
//! many model calls it issued so the report can total them.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use cexroot_core::config::{GatewayMode, RunConfig};
use cexroot_core::context::{load_spec_docs, prefetch, ContextCache, RtlCodeMap};
use cexroot_core::export::{export_graph, ExportFormat};
use cexroot_core::gateway::{Cassette, LlmGateway};
use cexroot_core::graph::{build_trace_tree, consolidate, topological_levels, CausalGraph};
use cexroot_core::oracle::load_dump;
use cexroot_eval::corpus;
use cexroot_pipeline::fixgen::{self, Fix, FixBundle};
use cexroot_pipeline::report::{build_report, render_markdown, ReportInputs};
use cexroot_pipeline::rover::{self, RoverOutcome};
use cexroot_pipeline::scanner::{self, ScanResult};

pub const GRAPH_FILE: &str = "graph.json";
pub const SCAN_FILE: &str = "scan.json";
pub const NARRATIVES_FILE: &str = "narratives.json";
pub const FIXES_FILE: &str = "fixes.json";
pub const CALLS_FILE: &str = "calls.json";
pub const REPORT_JSON_FILE: &str = "report.json";
pub const REPORT_MD_FILE: &str = "report.md";
pub const RESULTS_FILE: &str = "results.csv";

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation; exits 2.
    Usage(String),
    /// A stage failed; exits 1 naming the stage.
    Stage { stage: &'static str, message: String },
}

fn stage_error(stage: &'static str, error: impl std::fmt::Display) -> CliError {
    CliError::Stage { stage, message: error.to_string() }
}

/// Everything a stage needs besides its artifacts.
pub struct StageCtx {
    pub config: RunConfig,
    pub out_dir: PathBuf,
    pub dump: Option<PathBuf>,
    pub rtl: Option<PathBuf>,
    pub spec: Option<PathBuf>,
    pub scenario: String,
    pub cassette: Option<PathBuf>,
}

fn write_text(stage: &'static str, out_dir: &Path, name: &str, text: &str) -> Result<(), CliError> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| stage_error(stage, format!("cannot create {}: {e}", out_dir.display())))?;
    let path = out_dir.join(name);
    std::fs::write(&path, text)
        .map_err(|e| stage_error(stage, format!("cannot write {}: {e}", path.display())))
}

fn write_artifact<T: serde::Serialize>(
    stage: &'static str,
    out_dir: &Path,
    name: &str,
    value: &T,
) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| stage_error(stage, format!("cannot serialize {name}: {e}")))?;
    text.push('\n');
    write_text(stage, out_dir, name, &text)
}

fn read_artifact<T: serde::de::DeserializeOwned>(
    stage: &'static str,
    out_dir: &Path,
    name: &str,
) -> Result<T, CliError> {
    let path = out_dir.join(name);
    let text = std::fs::read_to_string(&path).map_err(|_| {
        stage_error(stage, format!("missing artifact {}; run the producing stage first", path.display()))
    })?;
    serde_json::from_str(&text)
        .map_err(|e| stage_error(stage, format!("malformed artifact {}: {e}", path.display())))
}

/// Loads the RTL tree and spec documents, then prefetches per-signal context
/// for every signal in the graph. Missing `--rtl` or `--spec` read as empty.
fn build_cache(
    ctx: &StageCtx,
    stage: &'static str,
    graph: &CausalGraph,
) -> Result<(RtlCodeMap, ContextCache), CliError> {
    let rtl = match &ctx.rtl {
        Some(dir) => RtlCodeMap::load(dir).map_err(|e| stage_error(stage, e))?,
        None => RtlCodeMap::default(),
    };
    let docs = match &ctx.spec {
        Some(dir) => load_spec_docs(dir).map_err(|e| stage_error(stage, e))?,
        None => BTreeMap::new(),
    };
    let signals: Vec<String> = graph
        .keys()
        .map(|key| key.signal.clone())
        .collect::<BTreeSet<String>>()
        .into_iter()
        .collect();
    let cache = prefetch(&signals, &rtl, &docs, ctx.config.fuzzy_threshold);
    Ok((rtl, cache))
}

fn cassette_path<'a>(ctx: &'a StageCtx) -> &'a Path {
    ctx.cassette.as_deref().expect("cassette presence is validated before dispatch")
}

fn open_gateway(ctx: &StageCtx, stage: &'static str) -> Result<LlmGateway, CliError> {
    let gateway_config = ctx.config.gateway_config();
    match ctx.config.gateway_mode {
        GatewayMode::Replay => {
            let cassette =
                Cassette::load(cassette_path(ctx)).map_err(|e| stage_error(stage, e))?;
            Ok(LlmGateway::replay(cassette, gateway_config))
        }
        GatewayMode::Record => Ok(LlmGateway::live(gateway_config).with_recording()),
        GatewayMode::Live => Ok(LlmGateway::live(gateway_config)),
    }
}

/// In record mode, appends this stage's exchanges to the cassette file so
/// chained stages build up one replayable transcript.
fn save_recording(
    ctx: &StageCtx,
    stage: &'static str,
    gateway: &LlmGateway,
) -> Result<(), CliError> {
    if ctx.config.gateway_mode != GatewayMode::Record {
        return Ok(());
    }
    let path = cassette_path(ctx);
    let mut records = if path.is_file() {
        Cassette::load(path).map_err(|e| stage_error(stage, e))?.records().to_vec()
    } else {
        Vec::new()
    };
    records.extend(gateway.recorded().records().to_vec());
    Cassette::from_records(records).save(path).map_err(|e| stage_error(stage, e))
}

/// Records how many model calls one stage issued; the report sums these.
fn note_calls(
    ctx: &StageCtx,
    stage: &'static str,
    key: &str,
    calls: u64,
) -> Result<(), CliError> {
    let path = ctx.out_dir.join(CALLS_FILE);
    let mut ledger: BTreeMap<String, u64> = if path.is_file() {
        read_artifact(stage, &ctx.out_dir, CALLS_FILE)?
    } else {
        BTreeMap::new()
    };
    ledger.insert(key.to_string(), calls);
    write_artifact(stage, &ctx.out_dir, CALLS_FILE, &ledger)
}

pub fn graph(ctx: &StageCtx, export: Option<ExportFormat>) -> Result<(), CliError> {
    const STAGE: &str = "graph";
    let Some(dump_path) = &ctx.dump else {
        return Err(CliError::Usage("the graph stage needs --dump".to_string()));
    };
    let dump = load_dump(dump_path).map_err(|e| stage_error(STAGE, e))?;
    let tree = build_trace_tree(&dump, dump.root_event(), ctx.config.depth_limit)
        .map_err(|e| stage_error(STAGE, e))?;
    let graph = consolidate(&tree).map_err(|e| stage_error(STAGE, e))?;
    write_artifact(STAGE, &ctx.out_dir, GRAPH_FILE, &graph)?;
    if let Some(format) = export {
        let text = export_graph(&graph, format).map_err(|e| stage_error(STAGE, e))?;
        print!("{text}");
    }
    Ok(())
}

pub fn scan(ctx: &StageCtx) -> Result<(), CliError> {
    const STAGE: &str = "scan";
    let graph: CausalGraph = read_artifact(STAGE, &ctx.out_dir, GRAPH_FILE)?;
    let (_rtl, cache) = build_cache(ctx, STAGE, &graph)?;
    let gateway = open_gateway(ctx, STAGE)?;
    let result = scanner::scan(&graph, &cache, &gateway, &ctx.config, &ctx.scenario)
        .map_err(|e| stage_error(STAGE, e))?;
    write_artifact(STAGE, &ctx.out_dir, SCAN_FILE, &result)?;
    note_calls(ctx, STAGE, "scan", gateway.calls_issued())?;
    save_recording(ctx, STAGE, &gateway)
}

pub fn rove(ctx: &StageCtx) -> Result<(), CliError> {
    const STAGE: &str = "rove";
    let graph: CausalGraph = read_artifact(STAGE, &ctx.out_dir, GRAPH_FILE)?;
    let scan: ScanResult = read_artifact(STAGE, &ctx.out_dir, SCAN_FILE)?;
    let (_rtl, cache) = build_cache(ctx, STAGE, &graph)?;
    let gateway = open_gateway(ctx, STAGE)?;
    let outcome = rover::rove(&graph, &scan, &cache, &gateway, &ctx.config, &ctx.scenario)
        .map_err(|e| stage_error(STAGE, e))?;
    write_artifact(STAGE, &ctx.out_dir, NARRATIVES_FILE, &outcome)?;
    note_calls(ctx, STAGE, "rove", gateway.calls_issued())?;
    save_recording(ctx, STAGE, &gateway)
}

pub fn fix(ctx: &StageCtx) -> Result<(), CliError> {
    const STAGE: &str = "fix";
    let scan: ScanResult = read_artifact(STAGE, &ctx.out_dir, SCAN_FILE)?;
    let rover: RoverOutcome = read_artifact(STAGE, &ctx.out_dir, NARRATIVES_FILE)?;
    let rtl = match &ctx.rtl {
        Some(dir) => RtlCodeMap::load(dir).map_err(|e| stage_error(STAGE, e))?,
        None => RtlCodeMap::default(),
    };
    let gateway = open_gateway(ctx, STAGE)?;
    let bundle = FixBundle { scenario: &ctx.scenario, rtl: &rtl, scan: &scan, rover: &rover };
    // A run with no validated fixes still reports; the failure is noted but
    // does not abort the pipeline.
    let fixes: Vec<Fix> = match fixgen::ensemble(&bundle, &gateway, &ctx.config) {
        Ok(fixes) => fixes,
        Err(error) => {
            eprintln!("fix stage produced no validated fixes: {error}");
            Vec::new()
        }
    };
    write_artifact(STAGE, &ctx.out_dir, FIXES_FILE, &fixes)?;
    note_calls(ctx, STAGE, "fix", gateway.calls_issued())?;
    save_recording(ctx, STAGE, &gateway)
}

pub fn report(ctx: &StageCtx, wall_time_seconds: Option<f64>) -> Result<(), CliError> {
    const STAGE: &str = "report";
    let graph: CausalGraph = read_artifact(STAGE, &ctx.out_dir, GRAPH_FILE)?;
    let scan: ScanResult = read_artifact(STAGE, &ctx.out_dir, SCAN_FILE)?;
    let rover: RoverOutcome = read_artifact(STAGE, &ctx.out_dir, NARRATIVES_FILE)?;
    let fixes: Vec<Fix> = read_artifact(STAGE, &ctx.out_dir, FIXES_FILE)?;
    let calls: BTreeMap<String, u64> = if ctx.out_dir.join(CALLS_FILE).is_file() {
        read_artifact(STAGE, &ctx.out_dir, CALLS_FILE)?
    } else {
        BTreeMap::new()
    };
    let (_rtl, cache) = build_cache(ctx, STAGE, &graph)?;
    let levels = topological_levels(&graph).map_err(|e| stage_error(STAGE, e))?;
    let inputs = ReportInputs {
        scenario: &ctx.scenario,
        graph: &graph,
        scan: &scan,
        rover: &rover,
        fixes: &fixes,
        cache: &cache,
        levels: &levels,
        gateway_calls: calls.values().sum::<u64>() as usize,
        wall_time_seconds,
    };
    let report = build_report(&inputs);
    write_artifact(STAGE, &ctx.out_dir, REPORT_JSON_FILE, &report)?;
    write_text(STAGE, &ctx.out_dir, REPORT_MD_FILE, &render_markdown(&report))
}

/// Chains every stage. Wall time reaches the report only outside replay, so
/// replayed runs stay byte-deterministic.
pub fn run_all(ctx: &StageCtx) -> Result<(), CliError> {
    if ctx.dump.is_none() {
        return Err(CliError::Usage("run needs --dump".to_string()));
    }
    let start = Instant::now();
    graph(ctx, None)?;
    scan(ctx)?;
    rove(ctx)?;
    fix(ctx)?;
    let wall_time = match ctx.config.gateway_mode {
        GatewayMode::Replay => None,
        GatewayMode::Live | GatewayMode::Record => Some(start.elapsed().as_secs_f64()),
    };
    report(ctx, wall_time)
}

pub fn eval(ctx: &StageCtx, corpus_dir: &Path) -> Result<(), CliError> {
    const STAGE: &str = "eval";
    let scores =
        corpus::evaluate_corpus(corpus_dir, &ctx.config).map_err(|e| stage_error(STAGE, e))?;
    let csv = corpus::results_csv(&scores);
    write_text(STAGE, &ctx.out_dir, RESULTS_FILE, &csv)?;
    print!("{csv}");
    Ok(())
}
