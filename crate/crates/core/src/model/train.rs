use std::fmt::Debug;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{adam_step, AdamParams, AdamState, LmCheckpoint, LmConfig, ModelError, RngState, TokenBatch};
use crate::rng::substream;
use crate::scalar::Scalar;
use crate::tensor::TensorError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainHyper {
    pub batch: usize,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Epochs after which a checkpoint is kept; the final epoch is always
    /// kept and epoch 0 denotes the initialization.
    pub checkpoint_schedule: Vec<usize>,
    #[serde(default)]
    pub adam: AdamParams,
}

#[derive(Debug, Clone)]
pub struct PretrainRun<S> {
    pub checkpoints: Vec<LmCheckpoint<S>>,
    /// Mean token cross-entropy of every optimizer step, in order.
    pub losses: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum TrainError<S: Debug> {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("training diverged at step {step}")]
    Diverged {
        step: u64,
        last_good: Box<LmCheckpoint<S>>,
        losses: Vec<f64>,
    },
}

/// Trains from the seeded initialization with Adam.
pub fn pretrain<S: Scalar>(
    config: LmConfig,
    corpus: &[Vec<u32>],
    hyper: &PretrainHyper,
) -> Result<PretrainRun<S>, TrainError<S>> {
    let init = LmCheckpoint::init(config, hyper.seed)?;
    let mut run = resume(init.clone(), corpus, hyper)?;
    if hyper.epochs == 0 || hyper.checkpoint_schedule.contains(&0) {
        run.checkpoints.insert(0, init);
    }
    Ok(run)
}

/// Continues training from `start` up to `hyper.epochs`. Optimizer moments
/// and the training RNG stream are restored from the checkpoint, so a run
/// interrupted at any saved epoch resumes bit-exactly.
pub fn resume<S: Scalar>(
    start: LmCheckpoint<S>,
    corpus: &[Vec<u32>],
    hyper: &PretrainHyper,
) -> Result<PretrainRun<S>, TrainError<S>> {
    let mut run = PretrainRun {
        checkpoints: Vec::new(),
        losses: Vec::new(),
    };
    if start.epoch >= hyper.epochs {
        return Ok(run);
    }
    if corpus.is_empty() {
        return Err(ModelError::EmptyInput("pretraining corpus").into());
    }
    let config = start.model.config().clone();
    for s in corpus {
        TokenBatch::new(&[s], &config)?;
    }
    let mut rng = match &start.rng {
        Some(state) => state.restore().map_err(ModelError::from)?,
        None => substream(hyper.seed, "train"),
    };
    let n_params = start.model.params().len();
    let mut ckpt = start;
    let mut adam = ckpt.adam.take().unwrap_or_else(|| AdamState::new(n_params));
    let lr = S::of(hyper.lr);
    let batch_size = hyper.batch.max(1);
    let mut order: Vec<usize> = (0..corpus.len()).collect();

    for epoch in ckpt.epoch + 1..=hyper.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng);
        for idx in order.chunks(batch_size) {
            let sentences: Vec<&[u32]> = idx.iter().map(|&i| corpus[i].as_slice()).collect();
            let tokens: usize = sentences.iter().map(|s| s.len()).sum();
            let batch = TokenBatch::new(&sentences, &config)?;
            let step = ckpt.step + 1;
            let diverged = |ckpt: &LmCheckpoint<S>, adam: &AdamState<S>, losses: &[f64]| {
                let mut good = ckpt.clone();
                good.adam = Some(adam.clone());
                TrainError::Diverged {
                    step,
                    last_good: Box::new(good),
                    losses: losses.to_vec(),
                }
            };
            let (loss, grad) = match ckpt.model.loss_and_grad(&batch, S::of(tokens as f64), Some(&mut rng)) {
                Ok(v) => v,
                Err(ModelError::Tensor(TensorError::NonFiniteGradient(_) | TensorError::NonFinite(_))) => {
                    return Err(diverged(&ckpt, &adam, &run.losses))
                }
                Err(e) => return Err(e.into()),
            };
            let loss = loss.to_f64_lossy();
            if !loss.is_finite() {
                return Err(diverged(&ckpt, &adam, &run.losses));
            }
            adam_step(ckpt.model.params_mut(), &grad, &mut adam, hyper.adam, lr)?;
            ckpt.step = step;
            run.losses.push(loss);
            log::trace!("epoch {epoch} step {step} loss {loss:.6}");
        }
        ckpt.epoch = epoch;
        log::debug!(
            "epoch {epoch} done, mean loss {:.4}",
            run.losses.iter().rev().take(order.len().div_ceil(batch_size)).sum::<f64>()
                / order.len().div_ceil(batch_size) as f64
        );
        if epoch == hyper.epochs || hyper.checkpoint_schedule.contains(&epoch) {
            let mut saved = ckpt.clone();
            saved.adam = Some(adam.clone());
            saved.rng = Some(RngState::capture(&rng));
            run.checkpoints.push(saved);
        }
    }
    Ok(run)
}
