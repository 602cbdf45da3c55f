//! Shared infrastructure for counterexample root-cause analysis.
//!
//! The crate covers the data layer of the pipeline: signal events and node
//! keys, causality oracles (trace dumps and external adapter processes),
//! causal graph construction and consolidation, graph export, RTL and spec
//! context retrieval, the budgeted LLM gateway with cassette record/replay,
//! and run configuration.

pub mod adapter;
pub mod config;
pub mod context;
pub mod event;
pub mod export;
pub mod gateway;
pub mod graph;
pub mod hash;
pub mod oracle;
pub mod synthetic;

pub use adapter::{adapter_oracle, AdapterOracle, DEFAULT_ADAPTER_TIMEOUT};
pub use config::{ConfigError, ConfigPatch, GatewayMode, NdcgGain, RankingMode, RunConfig};
pub use context::{
    fuzzy_match, leaf_token, load_spec_docs, prefetch, ContextCache, ContextError, RtlCodeMap,
    RtlSnippet, SignalContext, SpecExcerpt,
};
pub use event::{KeyParseError, NodeKey, SignalEvent};
pub use export::{export_graph, ExportFormat};
pub use gateway::{
    Cassette, CassetteRecord, GatewayConfig, GatewayError, GenerationRequest, LlmGateway,
    TokenCounter, DEFAULT_PROMPT_BUDGET,
};
pub use graph::{
    build_trace_tree, consolidate, topological_levels, CausalGraph, GraphError, GraphStats,
    TraceTree,
};
pub use hash::{fnv1a64, fnv1a64_hex};
pub use oracle::{
    dump_from_records, dump_to_json, load_dump, CausalityDump, CausalityOracle, DumpEvent,
    OracleError,
};
