//! Metrics, dataset splits, selection evaluation, reports and the offline
//! pipeline behind the command-line tool.

pub mod config;
pub mod evaluate;
pub mod metrics;
pub mod pipeline;
pub mod report;
pub mod split;

pub use config::PipelineConfig;
pub use evaluate::{evaluate_selection, CandidateSet, EvalRow, OracleScorer};
pub use metrics::{compute_metrics, MetricsReport, OutcomeRecord};
pub use report::Report;
pub use split::{split_dataset, SplitMode, SplitSpec};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("no records")]
    EmptyRecords,
    #[error("need at least two distinct tasks for a by-task split, found {0}")]
    TooFewTasks(usize),
    #[error("test fraction {0} outside (0, 1)")]
    InvalidFraction(f64),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    File { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Trace(#[from] crate::trace::TraceError),
    #[error(transparent)]
    Pool(#[from] crate::task_pool::PoolError),
    #[error(transparent)]
    Env(#[from] crate::scripted_env::EnvError),
    #[error(transparent)]
    Model(#[from] crate::model_io::ModelError),
    #[error(transparent)]
    Rollout(#[from] crate::rollout::RolloutError),
    #[error(transparent)]
    Verifier(#[from] crate::verifier::VerifierError),
}
