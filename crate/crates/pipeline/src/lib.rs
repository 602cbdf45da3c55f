//! Analysis pipeline: graph scanning, hypothesis exploration, fix generation,
//! and report rendering on top of the causal-graph core.

pub mod extract;
pub mod fixgen;
pub mod prompts;
pub mod report;
pub mod rover;
pub mod scanner;

pub use fixgen::{
    apply_fix, build_fix_prompt, canonicalize, create_signature, ensemble, generate_fixes,
    parse_fix_reply, revert_fix, signature_of, validate_fix, Fix, FixBundle, FixCategory,
    FixError, FixLocation, ValidationStatus, STRATEGIES,
};
pub use report::{
    build_report, build_timeline, render_markdown, DebugReport, ReportHypothesis, ReportInputs,
    RunMetadata, SpecRef, TimelineEntry,
};
pub use rover::{
    rank_hypotheses, rove, Hypothesis, HypothesisStatus, NarrativeAnalysis, RankedHypothesis,
    RoverError, RoverOutcome, TimelineStep,
};
pub use scanner::{
    binary_search_max_batch, build_scan_prompt, parse_scan_response, scan, NodeAnalysis,
    ScanError, ScanIssue, ScanResult, SingleNodeOverBudget,
};
