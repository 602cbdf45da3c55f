//! LLM-as-judge scoring of a hypothesis against the golden answer.
//!
//! The judge returns four component scores; the overall is always recomputed
//! locally as their mean so a model's arithmetic cannot skew aggregates.

use cexroot_core::config::RunConfig;
use cexroot_core::gateway::{GatewayError, GenerationRequest, LlmGateway};
use cexroot_pipeline::extract::{extract_json, number_field};
use cexroot_pipeline::prompts;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    /// Reply carried no parseable score object; the hypothesis is recorded
    /// as unjudged and excluded from aggregates.
    #[error("judge reply for rank {rank} was not parseable")]
    Unparseable { rank: usize },
}

/// Component scores plus the locally recomputed mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JudgedScores {
    pub relevance: f64,
    pub preciseness: f64,
    pub causal_timeline: f64,
    pub correctness: f64,
    pub overall: f64,
}

impl JudgedScores {
    pub fn from_components(
        relevance: f64,
        preciseness: f64,
        causal_timeline: f64,
        correctness: f64,
    ) -> Self {
        let overall = (relevance + preciseness + causal_timeline + correctness) / 4.0;
        Self { relevance, preciseness, causal_timeline, correctness, overall }
    }
}

/// Scores one hypothesis presentation against the golden answer. `rank` is
/// the 1-based position in the system ranking and feeds both the prompt and
/// the request tag `eval.judge.{rank}`.
pub fn judge_hypothesis(
    hypothesis: &str,
    golden_answer: &str,
    rank: usize,
    problem_description: &str,
    gateway: &LlmGateway,
    config: &RunConfig,
) -> Result<JudgedScores, JudgeError> {
    let prompt = prompts::judge_prompt(problem_description, golden_answer, rank, hypothesis);
    let mut request = GenerationRequest::new(format!("eval.judge.{rank}"), prompt);
    request.temperature = config.temperature;
    request.max_output_tokens = config.max_output_tokens;
    let reply = gateway.generate(&request)?;
    parse_judge_reply(&reply).ok_or(JudgeError::Unparseable { rank })
}

/// Extracts the four component scores; each must parse and sit in `[0, 1]`.
/// Any model-provided overall is ignored in favor of the local mean.
pub fn parse_judge_reply(reply: &str) -> Option<JudgedScores> {
    let value = extract_json(reply)?;
    let mut components = [0.0f64; 4];
    for (slot, field) in components
        .iter_mut()
        .zip(["relevance", "preciseness", "causal_timeline", "correctness"])
    {
        let score = number_field(&value, field)?;
        if !(0.0..=1.0).contains(&score) {
            return None;
        }
        *slot = score;
    }
    Some(JudgedScores::from_components(
        components[0],
        components[1],
        components[2],
        components[3],
    ))
}
