//! Fine-tuning via gradient differentials.
//!
//! The differential `gΔ = g⁺ − g⁻` contrasts the mean-token cross-entropy
//! gradient on a paradigm's grammatical sentences with that on their
//! ungrammatical counterparts. Parameters with `|gΔ| > ε` form the subspace
//! θ₀; tuning applies plain SGD along `gΔ` restricted to θ₀.

mod dump;

pub use dump::{DumpError, SubspaceDelta};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{MinimalPair, Paradigm};
use crate::model::{masked_sgd_step, pair_accuracy, perplexity, sgd_step, GradientVector, LmCheckpoint, ModelError, Transformer};

/// Sentences per forward/backward chunk when accumulating batch gradients.
pub const GRAD_CHUNK: usize = 128;
pub const DEFAULT_EPSILON: f64 = 1e-3;
pub const DEFAULT_MAX_STEPS: usize = 20;
/// Window of the stopping rule.
pub const STOP_WINDOW: usize = 5;

#[derive(Debug, Error)]
pub enum FtgdError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("epsilon must be positive and finite, got {0}")]
    InvalidEpsilon(f64),
    #[error("no parameter of `{paradigm}` has |gΔ| > {epsilon}; try a smaller epsilon")]
    EmptySubspace { paradigm: String, epsilon: f64 },
    #[error("gradient differential of `{0}` is identically zero")]
    ZeroDifferential(String),
    #[error("paradigm `{0}` needs non-empty train and eval splits")]
    EmptySplit(String),
    #[error("differential and subspace disagree: {0}")]
    Mismatch(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientDifferential {
    pub g_plus: GradientVector<f64>,
    pub g_minus: GradientVector<f64>,
    pub g_delta: GradientVector<f64>,
    pub paradigm: String,
    pub checkpoint: String,
}

impl GradientDifferential {
    pub fn from_parts(
        g_plus: GradientVector<f64>,
        g_minus: GradientVector<f64>,
        paradigm: impl Into<String>,
        checkpoint: impl Into<String>,
    ) -> Self {
        let g_delta = g_plus.iter().zip(g_minus.iter()).map(|(p, m)| p - m).collect::<Vec<_>>();
        Self {
            g_plus,
            g_minus,
            g_delta: g_delta.into(),
            paradigm: paradigm.into(),
            checkpoint: checkpoint.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.g_delta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g_delta.is_empty()
    }

    /// L1 norm of `g_delta`.
    pub fn total_mass(&self) -> f64 {
        self.g_delta.iter().map(|v| v.abs()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSubspace {
    /// Sorted, unique flat parameter indices.
    pub indices: Vec<usize>,
    pub epsilon: f64,
    pub paradigm: String,
}

impl ParamSubspace {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }
}

fn sentences<'a>(pairs: &[&'a MinimalPair], good: bool) -> Vec<&'a [u32]> {
    pairs
        .iter()
        .map(|p| if good { p.good.as_slice() } else { p.bad.as_slice() })
        .collect()
}

/// `g⁺`, `g⁻` and `gΔ` over the whole batch of pairs (dropout off).
pub fn gradient_differential(
    model: &Transformer<f64>,
    checkpoint: &str,
    paradigm: &str,
    pairs: &[&MinimalPair],
) -> Result<GradientDifferential, FtgdError> {
    if pairs.is_empty() {
        return Err(FtgdError::EmptySplit(paradigm.to_string()));
    }
    let (_, g_plus) = model.mean_loss_grad(&sentences(pairs, true), GRAD_CHUNK)?;
    let (_, g_minus) = model.mean_loss_grad(&sentences(pairs, false), GRAD_CHUNK)?;
    Ok(GradientDifferential::from_parts(g_plus, g_minus, paradigm, checkpoint))
}

fn check_epsilon(epsilon: f64) -> Result<(), FtgdError> {
    if epsilon > 0.0 && epsilon.is_finite() {
        Ok(())
    } else {
        Err(FtgdError::InvalidEpsilon(epsilon))
    }
}

/// Indices with `|gΔ| > ε` (strict).
pub fn select_subspace(gd: &GradientDifferential, epsilon: f64) -> Result<ParamSubspace, FtgdError> {
    check_epsilon(epsilon)?;
    let indices: Vec<usize> = gd
        .g_delta
        .iter()
        .enumerate()
        .filter(|(_, v)| v.abs() > epsilon)
        .map(|(i, _)| i)
        .collect();
    if indices.is_empty() {
        return Err(FtgdError::EmptySubspace {
            paradigm: gd.paradigm.clone(),
            epsilon,
        });
    }
    Ok(ParamSubspace {
        indices,
        epsilon,
        paradigm: gd.paradigm.clone(),
    })
}

/// Log-spaced histogram of `|gΔ|`. Bin `k` covers `[10^k, 10^(k+1))`;
/// values below `10^MIN_DECADE` (including zeros) fall in `underflow`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagnitudeHistogram {
    pub decades: Vec<i32>,
    pub counts: Vec<usize>,
    pub underflow: usize,
}

impl MagnitudeHistogram {
    pub const MIN_DECADE: i32 = -12;

    pub fn of(values: &[f64]) -> Self {
        let max = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let top = if max > 0.0 {
            (max.log10().floor() as i32).max(Self::MIN_DECADE)
        } else {
            Self::MIN_DECADE
        };
        let decades: Vec<i32> = (Self::MIN_DECADE..=top).collect();
        let mut counts = vec![0; decades.len()];
        let mut underflow = 0;
        let floor = 10f64.powi(Self::MIN_DECADE);
        for v in values {
            let a = v.abs();
            if a < floor {
                underflow += 1;
            } else {
                let k = (a.log10().floor() as i32).clamp(Self::MIN_DECADE, top);
                counts[(k - Self::MIN_DECADE) as usize] += 1;
            }
        }
        Self {
            decades,
            counts,
            underflow,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassStats {
    pub param_fraction: f64,
    pub mass_fraction: f64,
    pub histogram: MagnitudeHistogram,
}

/// Share of parameters in θ₀ and share of the L1 mass of `gΔ` they carry.
pub fn gradient_mass_stats(gd: &GradientDifferential, subspace: &ParamSubspace) -> Result<MassStats, FtgdError> {
    let total = gd.total_mass();
    if total == 0.0 {
        return Err(FtgdError::ZeroDifferential(gd.paradigm.clone()));
    }
    if subspace.indices.last().is_some_and(|&i| i >= gd.len()) {
        return Err(FtgdError::Mismatch("subspace index beyond parameter count".into()));
    }
    let inside: f64 = subspace.indices.iter().map(|&i| gd.g_delta[i].abs()).sum();
    Ok(MassStats {
        param_fraction: subspace.len() as f64 / gd.len() as f64,
        mass_fraction: inside / total,
        histogram: MagnitudeHistogram::of(&gd.g_delta),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Continue,
    Stop,
}

/// Stop once at least five accuracies are recorded and `current` does not
/// beat the mean of the last five.
pub fn stopping_rule(history: &[f64], current: f64) -> Decision {
    if history.len() < STOP_WINDOW {
        return Decision::Continue;
    }
    let last = &history[history.len() - STOP_WINDOW..];
    let mean = last.iter().sum::<f64>() / STOP_WINDOW as f64;
    if current <= mean {
        Decision::Stop
    } else {
        Decision::Continue
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneHyper {
    pub lr: f64,
    pub epsilon: f64,
    pub max_steps: usize,
    /// Re-select θ₀ from the current differential at every step instead of
    /// keeping the step-0 subspace.
    #[serde(default)]
    pub reselect_each_step: bool,
}

impl Default for TuneHyper {
    fn default() -> Self {
        Self {
            lr: 0.06,
            epsilon: DEFAULT_EPSILON,
            max_steps: DEFAULT_MAX_STEPS,
            reselect_each_step: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxSteps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FtgdRunLog {
    /// Eval-split accuracy before tuning (entry 0) and after every step.
    pub accuracy: Vec<f64>,
    /// Held-out corpus perplexity aligned with `accuracy`; empty when no
    /// corpus was supplied.
    pub perplexity: Vec<f64>,
    pub stop: StopReason,
    pub steps: usize,
}

#[derive(Debug, Clone)]
pub struct FtgdOutcome {
    pub tuned: LmCheckpoint<f64>,
    pub log: FtgdRunLog,
    pub differential: GradientDifferential,
    pub subspace: ParamSubspace,
}

#[derive(Debug, Clone)]
pub struct FullTuneOutcome {
    pub tuned: LmCheckpoint<f64>,
    pub log: FtgdRunLog,
}

struct Monitor<'a> {
    paradigm: &'a Paradigm,
    eval: Vec<&'a MinimalPair>,
    corpus: Option<&'a [&'a [u32]]>,
    log: FtgdRunLog,
}

impl<'a> Monitor<'a> {
    fn new(
        model: &Transformer<f64>,
        paradigm: &'a Paradigm,
        corpus: Option<&'a [&'a [u32]]>,
    ) -> Result<Self, FtgdError> {
        if paradigm.train.is_empty() || paradigm.eval.is_empty() {
            return Err(FtgdError::EmptySplit(paradigm.id.clone()));
        }
        let mut m = Self {
            paradigm,
            eval: paradigm.eval_pairs(),
            corpus,
            log: FtgdRunLog {
                accuracy: Vec::new(),
                perplexity: Vec::new(),
                stop: StopReason::MaxSteps,
                steps: 0,
            },
        };
        m.record(model)?;
        Ok(m)
    }

    fn accuracy(&self, model: &Transformer<f64>) -> Result<f64, FtgdError> {
        Ok(pair_accuracy(model, &self.paradigm.id, &self.eval)?.accuracy)
    }

    fn record(&mut self, model: &Transformer<f64>) -> Result<f64, FtgdError> {
        let acc = self.accuracy(model)?;
        self.log.accuracy.push(acc);
        if let Some(c) = self.corpus {
            self.log.perplexity.push(perplexity(model, c)?);
        }
        Ok(acc)
    }
}

/// FTGD probe-tuning of one paradigm from `ckpt`. The subspace is fixed at
/// step 0 unless `reselect_each_step` is set; parameters outside it are
/// never written.
pub fn ftgd_tune(
    ckpt: &LmCheckpoint<f64>,
    paradigm: &Paradigm,
    hyper: &TuneHyper,
    corpus: Option<&[&[u32]]>,
) -> Result<FtgdOutcome, FtgdError> {
    check_epsilon(hyper.epsilon)?;
    let checkpoint = ckpt.hash();
    let mut model = ckpt.model.clone();
    let mut monitor = Monitor::new(&model, paradigm, corpus)?;
    let train = paradigm.train_pairs();
    let gd0 = gradient_differential(&model, &checkpoint, &paradigm.id, &train)?;
    let sub0 = select_subspace(&gd0, hyper.epsilon)?;
    let mut mask = sub0.indices.clone();
    let mut gd = gd0.g_delta.clone();
    for step in 1..=hyper.max_steps {
        if step > 1 {
            gd = gradient_differential(&model, &checkpoint, &paradigm.id, &train)?.g_delta;
        }
        if hyper.reselect_each_step && step > 1 {
            mask = gd
                .iter()
                .enumerate()
                .filter(|(_, v)| v.abs() > hyper.epsilon)
                .map(|(i, _)| i)
                .collect();
        }
        masked_sgd_step(model.params_mut(), &gd, &mask, hyper.lr)?;
        monitor.log.steps = step;
        if finish_step(&mut monitor, &model)? == Decision::Stop {
            monitor.log.stop = StopReason::Converged;
            break;
        }
    }
    Ok(FtgdOutcome {
        tuned: derived(ckpt, model),
        log: monitor.log,
        differential: gd0,
        subspace: sub0,
    })
}

/// Baseline: the same loop with unmasked SGD along `g⁺`.
pub fn full_gradient_tune(
    ckpt: &LmCheckpoint<f64>,
    paradigm: &Paradigm,
    hyper: &TuneHyper,
    corpus: Option<&[&[u32]]>,
) -> Result<FullTuneOutcome, FtgdError> {
    let mut model = ckpt.model.clone();
    let mut monitor = Monitor::new(&model, paradigm, corpus)?;
    let train = paradigm.train_pairs();
    let goods = sentences(&train, true);
    for step in 1..=hyper.max_steps {
        let (_, g_plus) = model.mean_loss_grad(&goods, GRAD_CHUNK)?;
        sgd_step(model.params_mut(), &g_plus, hyper.lr)?;
        monitor.log.steps = step;
        if finish_step(&mut monitor, &model)? == Decision::Stop {
            monitor.log.stop = StopReason::Converged;
            break;
        }
    }
    Ok(FullTuneOutcome {
        tuned: derived(ckpt, model),
        log: monitor.log,
    })
}

fn finish_step(monitor: &mut Monitor, model: &Transformer<f64>) -> Result<Decision, FtgdError> {
    if let Some(index) = model.params().iter().position(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteGradient { index }.into());
    }
    let history = monitor.log.accuracy.clone();
    let acc = monitor.record(model)?;
    Ok(stopping_rule(&history, acc))
}

fn derived(ckpt: &LmCheckpoint<f64>, model: Transformer<f64>) -> LmCheckpoint<f64> {
    LmCheckpoint {
        model,
        adam: None,
        rng: None,
        seed: ckpt.seed,
        epoch: ckpt.epoch,
        step: ckpt.step,
    }
}
