//! Command-line front end for the pipeline.
//!
//! Seven subcommands cover the stages and the harness: `graph` builds the
//! causal graph from a failure dump; `scan`, `rove`, `fix` and `report` each
//! advance one stage from the previous stage's artifacts; `run` chains them
//! all; `eval` scores a corpus of recorded problems. Artifacts live under
//! `--out-dir`. Configuration resolves in layers: built-in defaults, then the
//! `--config` file, then flags. Exit codes: 0 success, 1 stage error, 2 usage
//! error.

mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use cexroot_core::config::{ConfigPatch, GatewayMode, NdcgGain, RankingMode, RunConfig};
use cexroot_core::export::ExportFormat;
use clap::{Args, Parser, Subcommand};

use crate::stages::{CliError, StageCtx};

#[derive(Parser)]
#[command(
    name = "cexroot",
    version,
    about = "Root-cause analysis for formal-verification counterexamples"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build and consolidate the causal graph from a failure dump.
    Graph(GraphCmd),
    /// Scan graph nodes level by level for suspicion verdicts.
    Scan(StageCmd),
    /// Explore hypotheses from suspicious seeds and rank them.
    Rove(StageCmd),
    /// Generate, validate, and merge candidate RTL fixes.
    Fix(StageCmd),
    /// Assemble the debug report from the stage artifacts.
    Report(StageCmd),
    /// Chain every stage end to end.
    Run(StageCmd),
    /// Score a corpus of recorded problems and write results.csv.
    Eval(EvalCmd),
}

#[derive(Args)]
struct GraphCmd {
    #[command(flatten)]
    common: CommonOpts,
    /// Also print the graph to stdout (edge-list-csv, gexf or ascii-tree).
    #[arg(long)]
    export: Option<ExportFormat>,
}

#[derive(Args)]
struct StageCmd {
    #[command(flatten)]
    common: CommonOpts,
}

#[derive(Args)]
struct EvalCmd {
    /// Corpus directory holding one problem per subdirectory.
    #[arg(long)]
    corpus: PathBuf,
    #[command(flatten)]
    common: CommonOpts,
}

/// Inputs, artifact location, and gateway selection shared by every stage.
#[derive(Args)]
struct CommonOpts {
    /// Failure dump feeding the graph stage.
    #[arg(long)]
    dump: Option<PathBuf>,
    /// RTL source tree for context snippets and fix validation.
    #[arg(long)]
    rtl: Option<PathBuf>,
    /// Directory of specification documents for excerpt retrieval.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Text file describing the failing scenario.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Directory stage artifacts are written to and read from.
    #[arg(long, default_value = "./cexroot-out")]
    out_dir: PathBuf,
    /// Cassette file backing the record and replay gateway modes.
    #[arg(long)]
    cassette: Option<PathBuf>,
    /// Shorthand for --gateway-mode replay.
    #[arg(long, conflicts_with = "record")]
    replay: bool,
    /// Shorthand for --gateway-mode record.
    #[arg(long)]
    record: bool,
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    knobs: KnobFlags,
}

/// One flag per configuration knob; flags win over the config file, which
/// wins over built-in defaults.
#[derive(Args)]
struct KnobFlags {
    /// Trace window, in cycles before the failing event.
    #[arg(long)]
    depth_limit: Option<u64>,
    /// Minimum fuzzy score for a spec passage to be retrieved.
    #[arg(long)]
    fuzzy_threshold: Option<f64>,
    /// Prompt token budget per model call.
    #[arg(long)]
    token_budget: Option<usize>,
    /// Suspicion score below which a suspicious verdict is not honored.
    #[arg(long)]
    suspicion_floor: Option<f64>,
    /// Exploration iterations per run.
    #[arg(long)]
    max_iterations: Option<usize>,
    /// The hypothesis pool never shrinks below this many slots.
    #[arg(long)]
    min_narratives: Option<usize>,
    /// Cap on hypotheses seeded from suspicious nodes.
    #[arg(long)]
    active_narratives: Option<usize>,
    /// Frontier size cap per hypothesis.
    #[arg(long)]
    frontier_cap: Option<usize>,
    /// Confidence at or above which a hypothesis retires as converged.
    #[arg(long)]
    convergence_confidence: Option<f64>,
    /// Confidence below which a surviving hypothesis is marked weak.
    #[arg(long)]
    weak_confidence: Option<f64>,
    /// Iterations a hypothesis must survive before the weak rule applies.
    #[arg(long)]
    weak_after_iters: Option<usize>,
    /// Frontier nodes explored per hypothesis per iteration, at most.
    #[arg(long)]
    select_targets_max: Option<usize>,
    /// Frontier nodes listed in a target-selection prompt, at most.
    #[arg(long)]
    frontier_listing_max: Option<usize>,
    /// Hypothesis ranking mode: batch or tournament.
    #[arg(long)]
    ranking_mode: Option<RankingMode>,
    /// Gateway mode: live, record or replay.
    #[arg(long)]
    gateway_mode: Option<GatewayMode>,
    /// Require digest matches when replaying a cassette (true or false).
    #[arg(long)]
    strict_replay: Option<bool>,
    /// Transport attempts per live model call.
    #[arg(long)]
    transport_retries: Option<u32>,
    /// Concurrent live calls allowed in flight.
    #[arg(long)]
    max_in_flight: Option<usize>,
    /// Chat-completions endpoint for live calls.
    #[arg(long)]
    endpoint: Option<String>,
    /// Model name sent with live calls.
    #[arg(long)]
    model: Option<String>,
    /// Sampling temperature.
    #[arg(long)]
    temperature: Option<f64>,
    /// Output token cap per model call.
    #[arg(long)]
    max_output_tokens: Option<u32>,
    /// Retries per fix strategy after a generation with no valid fixes.
    #[arg(long)]
    fix_retry_limit: Option<u32>,
    /// Seconds before a dump-adapter subprocess is killed.
    #[arg(long)]
    adapter_timeout_secs: Option<u64>,
    /// Judged-overall threshold for reciprocal rank relevance.
    #[arg(long)]
    mrr_threshold: Option<f64>,
    /// NDCG gain profile: linear or binary.
    #[arg(long)]
    ndcg_gain: Option<NdcgGain>,
}

impl KnobFlags {
    fn to_patch(&self) -> ConfigPatch {
        ConfigPatch {
            depth_limit: self.depth_limit,
            fuzzy_threshold: self.fuzzy_threshold,
            token_budget: self.token_budget,
            suspicion_floor: self.suspicion_floor,
            max_iterations: self.max_iterations,
            min_narratives: self.min_narratives,
            active_narratives: self.active_narratives,
            frontier_cap: self.frontier_cap,
            convergence_confidence: self.convergence_confidence,
            weak_confidence: self.weak_confidence,
            weak_after_iters: self.weak_after_iters,
            select_targets_max: self.select_targets_max,
            frontier_listing_max: self.frontier_listing_max,
            ranking_mode: self.ranking_mode,
            gateway_mode: self.gateway_mode,
            strict_replay: self.strict_replay,
            transport_retries: self.transport_retries,
            max_in_flight: self.max_in_flight,
            endpoint: self.endpoint.clone(),
            model: self.model.clone(),
            temperature: self.temperature,
            max_output_tokens: self.max_output_tokens,
            fix_retry_limit: self.fix_retry_limit,
            adapter_timeout_secs: self.adapter_timeout_secs,
            mrr_threshold: self.mrr_threshold,
            ndcg_gain: self.ndcg_gain,
        }
    }
}

/// Layers defaults, the config file, flags, and the mode shorthands.
fn resolve_config(common: &CommonOpts) -> Result<RunConfig, CliError> {
    let mut config = RunConfig::default();
    if let Some(path) = &common.config {
        ConfigPatch::load(path)
            .map_err(|e| CliError::Usage(e.to_string()))?
            .apply(&mut config);
    }
    common.knobs.to_patch().apply(&mut config);
    if common.replay {
        config.gateway_mode = GatewayMode::Replay;
    }
    if common.record {
        config.gateway_mode = GatewayMode::Record;
    }
    match config.gateway_mode {
        GatewayMode::Replay if common.cassette.is_none() => {
            Err(CliError::Usage("replay mode requires --cassette".to_string()))
        }
        GatewayMode::Record if common.cassette.is_none() => {
            Err(CliError::Usage("record mode requires --cassette".to_string()))
        }
        _ => Ok(config),
    }
}

fn stage_context(common: &CommonOpts) -> Result<StageCtx, CliError> {
    let config = resolve_config(common)?;
    let scenario = match &common.scenario {
        Some(path) => std::fs::read_to_string(path).map_err(|e| {
            CliError::Usage(format!("cannot read scenario {}: {e}", path.display()))
        })?,
        None => String::new(),
    };
    Ok(StageCtx {
        config,
        out_dir: common.out_dir.clone(),
        dump: common.dump.clone(),
        rtl: common.rtl.clone(),
        spec: common.spec.clone(),
        scenario,
        cassette: common.cassette.clone(),
    })
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Graph(cmd) => stages::graph(&stage_context(&cmd.common)?, cmd.export),
        Command::Scan(cmd) => stages::scan(&stage_context(&cmd.common)?),
        Command::Rove(cmd) => stages::rove(&stage_context(&cmd.common)?),
        Command::Fix(cmd) => stages::fix(&stage_context(&cmd.common)?),
        Command::Report(cmd) => stages::report(&stage_context(&cmd.common)?, None),
        Command::Run(cmd) => stages::run_all(&stage_context(&cmd.common)?),
        Command::Eval(cmd) => stages::eval(&stage_context(&cmd.common)?, &cmd.corpus),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(message)) => {
            eprintln!("usage error: {message}");
            ExitCode::from(2)
        }
        Err(CliError::Stage { stage, message }) => {
            eprintln!("error in {stage} stage: {message}");
            ExitCode::from(1)
        }
    }
}
