//! Batch front end of the task-space pipeline: generate or ingest a suite,
//! pretrain, probe, analyze and report, all under one output directory.

pub mod commands;
pub mod config;
pub mod layout;
pub mod manifest;
pub mod svg;

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),
    #[error("{failed} of {total} probe rows failed; see transfer.json")]
    PartialProbe { failed: usize, total: usize },
    #[error("every probe row failed at epoch {0}")]
    ProbeFailed(usize),
    #[error("pretraining diverged at step {0}; the last good state was saved")]
    Diverged(u64),
    #[error(transparent)]
    Core(#[from] taskspace::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::PartialProbe { .. } => 3,
            CliError::MissingArtifact(_) => 4,
            _ => 1,
        }
    }
}

macro_rules! via_core {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Core(e.into())
            }
        }
    )*};
}

via_core!(
    taskspace::corpus::CorpusError,
    taskspace::model::ModelError,
    taskspace::model::CheckpointError,
    taskspace::ftgd::FtgdError,
    taskspace::ftgd::DumpError,
    taskspace::probing::ProbeError,
    taskspace::analytics::AnalyticsError
);
