//! Similarity probing. Transfer probing tunes one copy of the checkpoint per
//! task and re-evaluates every task; gradient probing only takes the step-0
//! differential of each task.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{Metric, TaskSpace};
use crate::corpus::{Paradigm, TaskSuite};
use crate::ftgd::{
    ftgd_tune, gradient_differential, select_subspace, DumpError, FtgdError, FtgdRunLog, SubspaceDelta, TuneHyper,
};
use crate::model::{pair_accuracy, CheckpointError, LmCheckpoint, ModelError, Transformer};

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("accuracy {0} outside [0, 1]")]
    AccuracyOutOfRange(f64),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ftgd(#[from] FtgdError),
    #[error(transparent)]
    Dump(#[from] DumpError),
    #[error("thread pool: {0}")]
    Pool(String),
    #[error("suite has no paradigms")]
    EmptySuite,
}

/// Accuracy change as a share of the largest change possible in its
/// direction: gains over `1 - pre`, losses over `pre`.
pub fn normalize_transfer(pre: f64, post: f64) -> Result<f64, ProbeError> {
    for v in [pre, post] {
        if !(0.0..=1.0).contains(&v) {
            return Err(ProbeError::AccuracyOutOfRange(v));
        }
    }
    let d = post - pre;
    Ok(if d > 0.0 && pre < 1.0 {
        d / (1.0 - pre)
    } else if d < 0.0 && pre > 0.0 {
        d / pre
    } else {
        0.0
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRecord {
    pub source: String,
    pub target: String,
    pub pre_acc: f64,
    pub post_acc: f64,
    pub transfer: f64,
}

/// Outcome of tuning one source task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowOutcome {
    pub task: String,
    pub subspace_size: Option<usize>,
    pub log: Option<FtgdRunLog>,
    /// Accuracy of the tuned model on every task, in suite order.
    pub post: Option<Vec<f64>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeManifest {
    pub checkpoint: String,
    pub checkpoint_path: PathBuf,
    pub tasks: Vec<String>,
    pub hyper: TuneHyper,
    /// Accuracy of the untuned checkpoint, in suite order.
    pub eval1: Vec<f64>,
    pub rows: Vec<RowOutcome>,
    pub records: Vec<TransferRecord>,
    pub artifacts: Vec<PathBuf>,
    pub seconds: f64,
}

impl ProbeManifest {
    pub fn failed_rows(&self) -> usize {
        self.rows.iter().filter(|r| r.error.is_some()).count()
    }
}

fn accuracies(model: &Transformer<f64>, paradigms: &[Paradigm]) -> Result<Vec<f64>, ModelError> {
    paradigms
        .iter()
        .map(|p| Ok(pair_accuracy(model, &p.id, &p.eval_pairs())?.accuracy))
        .collect()
}

/// TTS from pre-tuning accuracies and, per source row, post-tuning
/// accuracies (`None` for a failed row).
pub fn transfer_space(
    tasks: &[String],
    pre: &[f64],
    post: &[Option<Vec<f64>>],
    source: &str,
) -> Result<(TaskSpace, Vec<TransferRecord>), ProbeError> {
    let mut records = Vec::new();
    let mut values = vec![vec![None; tasks.len()]; tasks.len()];
    for (i, row) in post.iter().enumerate() {
        let Some(row) = row else { continue };
        for (j, (&a, &b)) in pre.iter().zip(row).enumerate() {
            let t = normalize_transfer(a, b)?;
            values[i][j] = Some(t);
            records.push(TransferRecord {
                source: tasks[i].clone(),
                target: tasks[j].clone(),
                pre_acc: a,
                post_acc: b,
                transfer: t,
            });
        }
    }
    let space = TaskSpace::new(tasks.to_vec(), values, Metric::Transfer, source).expect("square by construction");
    Ok((space, records))
}

fn tune_row(path: &Path, paradigm: &Paradigm, all: &[Paradigm], hyper: &TuneHyper) -> RowOutcome {
    let run = || -> Result<_, ProbeError> {
        let ckpt = LmCheckpoint::<f64>::load(path)?;
        let out = ftgd_tune(&ckpt, paradigm, hyper, None)?;
        let post = accuracies(&out.tuned.model, all)?;
        Ok((out.subspace.len(), out.log, post))
    };
    match run() {
        Ok((size, log, post)) => RowOutcome {
            task: paradigm.id.clone(),
            subspace_size: Some(size),
            log: Some(log),
            post: Some(post),
            error: None,
        },
        Err(e) => {
            log::warn!("tuning `{}` failed: {e}", paradigm.id);
            RowOutcome {
                task: paradigm.id.clone(),
                subspace_size: None,
                log: None,
                post: None,
                error: Some(e.to_string()),
            }
        }
    }
}

/// Fig. 1 protocol: eval₁ once, one FTGD run per task from the checkpoint
/// file, eval₂ of each tuned model on every task. Rows run on up to `jobs`
/// threads; a failed row stays missing.
pub fn transfer_probe(
    ckpt_path: &Path,
    suite: &TaskSuite,
    hyper: &TuneHyper,
    jobs: usize,
) -> Result<(TaskSpace, ProbeManifest), ProbeError> {
    if suite.paradigms.is_empty() {
        return Err(ProbeError::EmptySuite);
    }
    let start = Instant::now();
    let base = LmCheckpoint::<f64>::load(ckpt_path)?;
    let hash = base.hash();
    let eval1 = accuracies(&base.model, &suite.paradigms)?;
    drop(base);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| ProbeError::Pool(e.to_string()))?;
    let rows: Vec<RowOutcome> = pool.install(|| {
        suite
            .paradigms
            .par_iter()
            .map(|p| tune_row(ckpt_path, p, &suite.paradigms, hyper))
            .collect()
    });
    let tasks: Vec<String> = suite.paradigms.iter().map(|p| p.id.clone()).collect();
    let post: Vec<Option<Vec<f64>>> = rows.iter().map(|r| r.post.clone()).collect();
    let (space, records) = transfer_space(&tasks, &eval1, &post, &hash)?;
    let manifest = ProbeManifest {
        checkpoint: hash,
        checkpoint_path: ckpt_path.to_path_buf(),
        tasks,
        hyper: hyper.clone(),
        eval1,
        rows,
        records,
        artifacts: Vec::new(),
        seconds: start.elapsed().as_secs_f64(),
    };
    Ok((space, manifest))
}

/// Step-0 differential of one task restricted to its subspace. `delta` is
/// `None` when the task was excluded.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbedTask {
    pub task: String,
    pub subspace_size: usize,
    pub delta: Option<SubspaceDelta>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientProbe {
    pub checkpoint: String,
    pub epoch: usize,
    pub step: u64,
    pub epsilon: f64,
    pub tasks: Vec<ProbedTask>,
}

impl GradientProbe {
    /// Writes one dump per included task as `<dir>/<task>.tsgd`.
    pub fn write_dumps(&self, dir: &Path) -> Result<Vec<PathBuf>, ProbeError> {
        std::fs::create_dir_all(dir).map_err(DumpError::from)?;
        let mut paths = Vec::new();
        for t in &self.tasks {
            if let Some(d) = &t.delta {
                let path = dir.join(format!("{}.tsgd", t.task));
                d.save(&path)?;
                paths.push(path);
            }
        }
        Ok(paths)
    }
}

/// Differential and subspace of every task at the checkpoint, without any
/// update. Tasks with an empty subspace are kept but excluded.
pub fn gradient_probe(ckpt: &LmCheckpoint<f64>, suite: &TaskSuite, epsilon: f64) -> Result<GradientProbe, ProbeError> {
    if suite.paradigms.is_empty() {
        return Err(ProbeError::EmptySuite);
    }
    let hash = ckpt.hash();
    let mut tasks = Vec::with_capacity(suite.paradigms.len());
    for p in &suite.paradigms {
        let gd = gradient_differential(&ckpt.model, &hash, &p.id, &p.train_pairs())?;
        match select_subspace(&gd, epsilon) {
            Ok(sub) => tasks.push(ProbedTask {
                task: p.id.clone(),
                subspace_size: sub.len(),
                delta: Some(SubspaceDelta::new(&gd, &sub)?),
                error: None,
            }),
            Err(e @ FtgdError::EmptySubspace { .. }) => {
                log::warn!("excluding `{}`: {e}", p.id);
                tasks.push(ProbedTask {
                    task: p.id.clone(),
                    subspace_size: 0,
                    delta: None,
                    error: Some(e.to_string()),
                });
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(GradientProbe {
        checkpoint: hash,
        epoch: ckpt.epoch,
        step: ckpt.step,
        epsilon,
        tasks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_suite, SuiteSpec};
    use crate::model::LmConfig;

    #[test]
    fn transfer_normalization() {
        assert!((normalize_transfer(0.6, 0.8).unwrap() - 0.5).abs() < 1e-15);
        assert!((normalize_transfer(0.6, 0.3).unwrap() + 0.5).abs() < 1e-15);
        assert_eq!(normalize_transfer(0.7, 0.7).unwrap(), 0.0);
        assert_eq!(normalize_transfer(0.0, 1.0).unwrap(), 1.0);
        assert_eq!(normalize_transfer(1.0, 0.0).unwrap(), -1.0);
        assert!(matches!(normalize_transfer(1.2, 0.5), Err(ProbeError::AccuracyOutOfRange(_))));
        assert!(normalize_transfer(0.5, -0.1).is_err());
    }

    #[test]
    fn failed_rows_stay_missing() {
        let tasks = vec!["a".to_string(), "b".to_string()];
        let (space, records) = transfer_space(&tasks, &[0.5, 0.8], &[Some(vec![1.0, 0.4]), None], "c").unwrap();
        assert_eq!(space.get(0, 0), Some(1.0));
        assert_eq!(space.get(0, 1), Some(-0.5));
        assert_eq!(space.get(1, 0), None);
        assert_eq!(records.len(), 2);
    }

    fn tiny() -> (TaskSuite, LmCheckpoint<f64>) {
        let suite = generate_suite(
            2,
            &SuiteSpec {
                pairs_per: 30,
                ..SuiteSpec::default()
            },
        )
        .unwrap();
        let config = LmConfig {
            n_layers: 1,
            d_model: 16,
            n_heads: 2,
            d_ffn: 32,
            vocab_size: suite.vocab.len(),
            context_length: 16,
            dropout_rate: 0.0,
            tie_embeddings: true,
        };
        (suite, LmCheckpoint::init(config, 5).unwrap())
    }

    #[test]
    fn gradient_probe_is_read_only_and_repeatable() {
        let (suite, ckpt) = tiny();
        let before = ckpt.hash();
        let a = gradient_probe(&ckpt, &suite, 1e-3).unwrap();
        let b = gradient_probe(&ckpt, &suite, 1e-3).unwrap();
        assert_eq!(ckpt.hash(), before);
        assert_eq!(a.tasks.len(), suite.paradigms.len());
        let bytes = |g: &GradientProbe| -> Vec<Vec<u8>> {
            g.tasks.iter().filter_map(|t| t.delta.as_ref().map(|d| d.to_bytes())).collect()
        };
        assert_eq!(bytes(&a), bytes(&b));
    }

    #[test]
    fn huge_epsilon_excludes_every_task() {
        let (suite, ckpt) = tiny();
        let g = gradient_probe(&ckpt, &suite, 1e6).unwrap();
        assert!(g.tasks.iter().all(|t| t.delta.is_none() && t.error.is_some()));
    }

    #[test]
    fn transfer_probe_shapes_and_eval1() {
        let (suite, ckpt) = tiny();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        ckpt.save(&path).unwrap();
        let hyper = TuneHyper {
            max_steps: 2,
            ..TuneHyper::default()
        };
        let (tts, m) = transfer_probe(&path, &suite, &hyper, 2).unwrap();
        let n = suite.paradigms.len();
        assert_eq!(tts.len(), n);
        assert_eq!(m.rows.len(), n);
        assert_eq!(m.checkpoint, ckpt.hash());
        assert_eq!(m.eval1, accuracies(&ckpt.model, &suite.paradigms).unwrap());
        for row in &tts.values {
            for v in row.iter().flatten() {
                assert!((-1.0..=1.0).contains(v));
            }
        }
        assert_eq!(m.records.len(), (n - m.failed_rows()) * n);
    }
}
