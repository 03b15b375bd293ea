//! Linguistic task spaces for small language models.
//!
//! A tape-based autodiff engine drives a small decoder-only transformer.
//! Each minimal-pair paradigm is probed by fine-tuning on its gradient
//! differential (FTGD). Transfer and gradient similarities between
//! paradigms form task spaces that are compared against hypothesis and
//! vocabulary-control spaces.
//!
//! The tensor engine and model are generic over [`scalar::Scalar`]; the
//! probing and analytics pipeline runs in `f64`.

pub mod analytics;
pub mod corpus;
pub mod ftgd;
pub mod model;
pub mod probing;
pub mod rng;
pub mod scalar;
pub mod tensor;

use thiserror::Error;

pub use scalar::Scalar;

/// Scalar of the probing and analytics pipeline.
pub type Real = f64;
pub type Checkpoint = model::LmCheckpoint<Real>;
pub type Model = model::Transformer<Real>;
pub type Gradient = model::GradientVector<Real>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Corpus(#[from] corpus::CorpusError),
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Checkpoint(#[from] model::CheckpointError),
    #[error(transparent)]
    Train(#[from] model::TrainError<Real>),
    #[error(transparent)]
    Ftgd(#[from] ftgd::FtgdError),
    #[error(transparent)]
    Dump(#[from] ftgd::DumpError),
    #[error(transparent)]
    Probe(#[from] probing::ProbeError),
    #[error(transparent)]
    Analytics(#[from] analytics::AnalyticsError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
