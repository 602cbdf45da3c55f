//! Run configuration.
//!
//! One flat set of knobs shared by every stage. Values resolve in layers:
//! built-in defaults, then a `key = value` config file, then command-line
//! flags; the file and the flags both produce a [`ConfigPatch`] and the last
//! layer wins. Keys match the CLI flag names.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::gateway::GatewayConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("Bad config line {line}: {message}")]
    BadLine { line: usize, message: String },
    #[error("Unknown config key {0:?}")]
    UnknownKey(String),
    #[error("Bad value for {key}: {message}")]
    BadValue { key: String, message: String },
    #[error("Failed to read config {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GatewayMode {
    Live,
    Record,
    Replay,
}

impl FromStr for GatewayMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(Self::Live),
            "record" => Ok(Self::Record),
            "replay" => Ok(Self::Replay),
            other => Err(format!("unknown gateway mode {other:?} (live, record or replay)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankingMode {
    /// One scoring prompt covering all hypotheses.
    Batch,
    /// Pairwise comparisons driving a merge sort.
    Tournament,
}

impl FromStr for RankingMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "batch" => Ok(Self::Batch),
            "tournament" => Ok(Self::Tournament),
            other => Err(format!("unknown ranking mode {other:?} (batch or tournament)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NdcgGain {
    Linear,
    Binary,
}

impl FromStr for NdcgGain {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(Self::Linear),
            "binary" => Ok(Self::Binary),
            other => Err(format!("unknown ndcg gain {other:?} (linear or binary)")),
        }
    }
}

/// All pipeline knobs with their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Trace window, in cycles before the failing event.
    pub depth_limit: u64,
    /// Minimum fuzzy score for a spec passage to be retrieved.
    pub fuzzy_threshold: f64,
    /// Prompt token budget per model call.
    pub token_budget: usize,
    /// Suspicion score below which a suspicious verdict is not honored.
    pub suspicion_floor: f64,
    /// Exploration iterations per run.
    pub max_iterations: usize,
    /// The hypothesis pool never shrinks below this many slots.
    pub min_narratives: usize,
    /// Cap on hypotheses seeded from suspicious nodes; `None` seeds one per
    /// suspicious node.
    pub active_narratives: Option<usize>,
    /// Frontier size cap per hypothesis.
    pub frontier_cap: usize,
    /// Confidence at or above which a hypothesis retires as converged.
    pub convergence_confidence: f64,
    /// Confidence below which a surviving hypothesis is marked weak.
    pub weak_confidence: f64,
    /// Iterations a hypothesis must survive before the weak rule applies.
    pub weak_after_iters: usize,
    /// Frontier nodes explored per hypothesis per iteration, at most.
    pub select_targets_max: usize,
    /// Frontier nodes listed in a target-selection prompt, at most.
    pub frontier_listing_max: usize,
    pub ranking_mode: RankingMode,
    pub gateway_mode: GatewayMode,
    pub strict_replay: bool,
    pub transport_retries: u32,
    pub max_in_flight: usize,
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Retries per fix strategy after a generation with no valid fixes.
    pub fix_retry_limit: u32,
    pub adapter_timeout_secs: u64,
    /// Judged-overall threshold for reciprocal rank relevance.
    pub mrr_threshold: f64,
    pub ndcg_gain: NdcgGain,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            depth_limit: 20,
            fuzzy_threshold: 0.7,
            token_budget: 50_000,
            suspicion_floor: 0.5,
            max_iterations: 8,
            min_narratives: 3,
            active_narratives: None,
            frontier_cap: 20,
            convergence_confidence: 0.9,
            weak_confidence: 0.2,
            weak_after_iters: 3,
            select_targets_max: 3,
            frontier_listing_max: 10,
            ranking_mode: RankingMode::Batch,
            gateway_mode: GatewayMode::Live,
            strict_replay: true,
            transport_retries: 3,
            max_in_flight: 4,
            endpoint: "https://api.openai.com/v1/chat/completions".to_string(),
            model: "gpt-4o".to_string(),
            temperature: 0.0,
            max_output_tokens: 4_096,
            fix_retry_limit: 2,
            adapter_timeout_secs: 60,
            mrr_threshold: 0.5,
            ndcg_gain: NdcgGain::Linear,
        }
    }
}

impl RunConfig {
    pub fn gateway_config(&self) -> GatewayConfig {
        GatewayConfig {
            max_prompt_tokens: self.token_budget,
            strict_replay: self.strict_replay,
            transport_retries: self.transport_retries,
            max_in_flight: self.max_in_flight,
            endpoint: self.endpoint.clone(),
            model: self.model.clone(),
        }
    }
}

/// A partial configuration; unset fields leave the target untouched.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigPatch {
    pub depth_limit: Option<u64>,
    pub fuzzy_threshold: Option<f64>,
    pub token_budget: Option<usize>,
    pub suspicion_floor: Option<f64>,
    pub max_iterations: Option<usize>,
    pub min_narratives: Option<usize>,
    pub active_narratives: Option<usize>,
    pub frontier_cap: Option<usize>,
    pub convergence_confidence: Option<f64>,
    pub weak_confidence: Option<f64>,
    pub weak_after_iters: Option<usize>,
    pub select_targets_max: Option<usize>,
    pub frontier_listing_max: Option<usize>,
    pub ranking_mode: Option<RankingMode>,
    pub gateway_mode: Option<GatewayMode>,
    pub strict_replay: Option<bool>,
    pub transport_retries: Option<u32>,
    pub max_in_flight: Option<usize>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub temperature: Option<f64>,
    pub max_output_tokens: Option<u32>,
    pub fix_retry_limit: Option<u32>,
    pub adapter_timeout_secs: Option<u64>,
    pub mrr_threshold: Option<f64>,
    pub ndcg_gain: Option<NdcgGain>,
}

impl ConfigPatch {
    /// Parses the flat `key = value` file format. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut patch = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::BadLine {
                line: idx + 1,
                message: format!("expected key = value, got {line:?}"),
            })?;
            patch.set(key.trim(), value.trim())?;
        }
        Ok(patch)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    /// Sets one field from its config-file key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn parse_as<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            value.parse().map_err(|e: T::Err| ConfigError::BadValue {
                key: key.to_string(),
                message: e.to_string(),
            })
        }
        match key {
            "depth-limit" => self.depth_limit = Some(parse_as(key, value)?),
            "fuzzy-threshold" => self.fuzzy_threshold = Some(parse_as(key, value)?),
            "token-budget" => self.token_budget = Some(parse_as(key, value)?),
            "suspicion-floor" => self.suspicion_floor = Some(parse_as(key, value)?),
            "max-iterations" => self.max_iterations = Some(parse_as(key, value)?),
            "min-narratives" => self.min_narratives = Some(parse_as(key, value)?),
            "active-narratives" => self.active_narratives = Some(parse_as(key, value)?),
            "frontier-cap" => self.frontier_cap = Some(parse_as(key, value)?),
            "convergence-confidence" => self.convergence_confidence = Some(parse_as(key, value)?),
            "weak-confidence" => self.weak_confidence = Some(parse_as(key, value)?),
            "weak-after-iters" => self.weak_after_iters = Some(parse_as(key, value)?),
            "select-targets-max" => self.select_targets_max = Some(parse_as(key, value)?),
            "frontier-listing-max" => self.frontier_listing_max = Some(parse_as(key, value)?),
            "ranking-mode" => self.ranking_mode = Some(parse_as(key, value)?),
            "gateway-mode" => self.gateway_mode = Some(parse_as(key, value)?),
            "strict-replay" => self.strict_replay = Some(parse_as(key, value)?),
            "transport-retries" => self.transport_retries = Some(parse_as(key, value)?),
            "max-in-flight" => self.max_in_flight = Some(parse_as(key, value)?),
            "endpoint" => self.endpoint = Some(value.to_string()),
            "model" => self.model = Some(value.to_string()),
            "temperature" => self.temperature = Some(parse_as(key, value)?),
            "max-output-tokens" => self.max_output_tokens = Some(parse_as(key, value)?),
            "fix-retry-limit" => self.fix_retry_limit = Some(parse_as(key, value)?),
            "adapter-timeout-secs" => self.adapter_timeout_secs = Some(parse_as(key, value)?),
            "mrr-threshold" => self.mrr_threshold = Some(parse_as(key, value)?),
            "ndcg-gain" => self.ndcg_gain = Some(parse_as(key, value)?),
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Applies every set field onto `config`.
    pub fn apply(&self, config: &mut RunConfig) {
        macro_rules! take {
            ($field:ident) => {
                if let Some(v) = &self.$field {
                    config.$field = v.clone();
                }
            };
        }
        take!(depth_limit);
        take!(fuzzy_threshold);
        take!(token_budget);
        take!(suspicion_floor);
        take!(max_iterations);
        take!(min_narratives);
        take!(frontier_cap);
        take!(convergence_confidence);
        take!(weak_confidence);
        take!(weak_after_iters);
        take!(select_targets_max);
        take!(frontier_listing_max);
        take!(ranking_mode);
        take!(gateway_mode);
        take!(strict_replay);
        take!(transport_retries);
        take!(max_in_flight);
        take!(endpoint);
        take!(model);
        take!(temperature);
        take!(max_output_tokens);
        take!(fix_retry_limit);
        take!(adapter_timeout_secs);
        take!(mrr_threshold);
        take!(ndcg_gain);
        if let Some(v) = self.active_narratives {
            config.active_narratives = Some(v);
        }
    }
}
