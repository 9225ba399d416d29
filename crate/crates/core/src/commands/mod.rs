//! Command implementations behind the CLI. Everything except [`run`] is a
//! pure function of its file inputs and never calls a model.

pub mod cost;
pub mod evaluate;
pub mod render;
pub mod run;
pub mod verify;

use thiserror::Error;

use crate::config::ConfigError;
use crate::ingestion::IngestError;
use crate::runlog::RunLogError;
use crate::similarity::SimilarityError;
use crate::stats::StatsError;

pub use cost::{cmd_cost_estimate, CostEstimate, CostLine};
pub use evaluate::{cmd_evaluate, cmd_mcnemar, cmd_similarity, EvaluationOutput, McNemarReport, McNemarRow, SimilarityOutput};
pub use run::{cmd_run, RunSummary};
pub use verify::{cmd_verify, diff_json, Diff};

#[derive(Debug, Error)]
pub enum CommandError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    RunLog(#[from] RunLogError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("log records not in manifest: {}", .0.join(", "))]
    JoinError(Vec<String>),
    #[error("household {0} appears more than once in the log")]
    DuplicateEntry(String),
    #[error("log mixes pipelines or view modes")]
    MixedLog,
    #[error("logs cover different households ({} only in first, {} only in second)", only_first.len(), only_second.len())]
    PairingError { only_first: Vec<String>, only_second: Vec<String> },
    #[error("no token profile for pipeline {pipeline} with {images} image(s)")]
    MissingProfile { pipeline: crate::runlog::PipelineKind, images: u8 },
    #[error("run aborted at household {household_id}: {reason}")]
    Aborted { household_id: String, reason: String },
    #[error("invalid report: {0}")]
    InvalidReport(String),
}
