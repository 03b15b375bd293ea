//! Decoder-only transformer language model: scoring, training, checkpoints.

mod checkpoint;
mod config;
mod eval;
mod optim;
mod params;
mod train;
mod transformer;

pub use checkpoint::{CheckpointError, LmCheckpoint, RngState, FORMAT_VERSION};
pub use config::LmConfig;
pub use eval::{mean_nll, pair_accuracy, perplexity, sentence_logprob, EvalResult, TokenPair, EVAL_CHUNK};
pub use optim::{adam_step, masked_sgd_step, sgd_step, AdamParams, AdamState};
pub use params::{GradientVector, ParamEntry, ParamLayout};
pub use train::{pretrain, resume, PretrainHyper, PretrainRun, TrainError};
pub use transformer::{TokenBatch, Transformer, BOS};

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("token id {token} outside vocabulary of size {vocab}")]
    TokenOutOfVocab { token: u32, vocab: usize },
    #[error("empty sentence")]
    EmptySentence,
    #[error("sentence of {len} tokens exceeds context length {context}")]
    SentenceTooLong { len: usize, context: usize },
    #[error("expected {expected} parameters, found {found}")]
    ParamCount { expected: usize, found: usize },
    #[error("empty {0}")]
    EmptyInput(&'static str),
    #[error("non-finite gradient at flat index {index}")]
    NonFiniteGradient { index: usize },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}
