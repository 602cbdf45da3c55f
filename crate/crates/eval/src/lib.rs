//! Evaluation harness for counterexample root-cause runs: LLM-as-judge
//! hypothesis scoring, ranking metrics (Quality@Best, NDCG@5, MRR, Kendall
//! tau), sandboxed Pass@k fix verification, and a benchmark corpus driver.

pub mod corpus;
pub mod judge;
pub mod metrics;
pub mod verify;

pub use corpus::{
    evaluate_corpus, evaluate_problem, find_problems, results_csv, EvalError, ProblemPaths,
    ProblemScores,
};
pub use judge::{judge_hypothesis, parse_judge_reply, JudgeError, JudgedScores};
pub use metrics::{
    kendall_tau, kendall_tau_brute, mean, mrr, ndcg_at_k, quality_at_best, rate, MetricError,
};
pub use verify::{
    load_verifier, pass_at_k, CommandVerifier, MockVerifier, PassReport, Verifier, VerifyError,
    VerifyOutcome,
};
