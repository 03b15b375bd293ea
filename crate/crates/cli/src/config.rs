//! Run configuration: one JSON file, every section optional except the seed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use taskspace::corpus::{CorpusHyper, SuiteSpec};
use taskspace::ftgd::{TuneHyper, DEFAULT_EPSILON, DEFAULT_MAX_STEPS};
use taskspace::model::{AdamParams, LmConfig, PretrainHyper};
use taskspace::rng::sha256_hex;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CorpusSource {
    Synthetic(SuiteSpec),
    Blimp(BlimpSource),
}

impl Default for CorpusSource {
    fn default() -> Self {
        CorpusSource::Synthetic(SuiteSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlimpSource {
    /// Directory of `*.jsonl` records.
    pub path: PathBuf,
    /// Pretraining text, one sentence per line.
    pub pretrain_text: PathBuf,
    #[serde(default)]
    pub split_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainCorpusConfig {
    pub n_sentences: usize,
    pub zipf_exponent: f64,
    pub probed_fraction: f64,
    pub validation_fraction: f64,
}

impl Default for PretrainCorpusConfig {
    fn default() -> Self {
        let h = CorpusHyper::default();
        Self {
            n_sentences: 20_000,
            zipf_exponent: h.zipf_exponent,
            probed_fraction: h.probed_fraction,
            validation_fraction: h.validation_fraction,
        }
    }
}

impl PretrainCorpusConfig {
    pub fn hyper(&self) -> CorpusHyper {
        CorpusHyper {
            zipf_exponent: self.zipf_exponent,
            probed_fraction: self.probed_fraction,
            validation_fraction: self.validation_fraction,
        }
    }
}

/// Architecture without the vocabulary size, which comes from the suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ffn: usize,
    pub context_length: usize,
    pub dropout_rate: f64,
    pub tie_embeddings: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        let d = LmConfig::desk(1);
        Self {
            n_layers: d.n_layers,
            d_model: d.d_model,
            n_heads: d.n_heads,
            d_ffn: d.d_ffn,
            context_length: 16,
            dropout_rate: d.dropout_rate,
            tie_embeddings: d.tie_embeddings,
        }
    }
}

impl ModelSpec {
    pub fn lm_config(&self, vocab_size: usize) -> LmConfig {
        LmConfig {
            n_layers: self.n_layers,
            d_model: self.d_model,
            n_heads: self.n_heads,
            d_ffn: self.d_ffn,
            vocab_size,
            context_length: self.context_length,
            dropout_rate: self.dropout_rate,
            tie_embeddings: self.tie_embeddings,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub batch: usize,
    pub lr: f64,
    pub epochs: usize,
    /// Epochs whose checkpoints are kept (0 is the initialization). The
    /// final epoch is always kept.
    pub checkpoint_schedule: Vec<usize>,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            batch: 16,
            lr: 2e-3,
            epochs: 6,
            checkpoint_schedule: (0..=6).collect(),
        }
    }
}

impl PretrainConfig {
    pub fn hyper(&self, seed: u64) -> PretrainHyper {
        PretrainHyper {
            batch: self.batch,
            lr: self.lr,
            epochs: self.epochs,
            seed,
            checkpoint_schedule: self.checkpoint_schedule.clone(),
            adam: AdamParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub lr: f64,
    pub epsilon: f64,
    pub max_steps: usize,
    pub reselect_each_step: bool,
    /// Label permutations per correlation.
    pub permutations: usize,
    /// Cosine over the union of subspaces instead of their intersection.
    pub union_cosine: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        let t = TuneHyper::default();
        Self {
            lr: t.lr,
            epsilon: DEFAULT_EPSILON,
            max_steps: DEFAULT_MAX_STEPS,
            reselect_each_step: false,
            permutations: taskspace::analytics::DEFAULT_PERMUTATIONS,
            union_cosine: false,
        }
    }
}

impl ProbeConfig {
    pub fn tune_hyper(&self) -> TuneHyper {
        TuneHyper {
            lr: self.lr,
            epsilon: self.epsilon,
            max_steps: self.max_steps,
            reselect_each_step: self.reselect_each_step,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub corpus: CorpusSource,
    pub pretrain_corpus: PretrainCorpusConfig,
    pub model: ModelSpec,
    pub pretrain: PretrainConfig,
    pub probe: ProbeConfig,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            corpus: CorpusSource::default(),
            pretrain_corpus: PretrainCorpusConfig::default(),
            model: ModelSpec::default(),
            pretrain: PretrainConfig::default(),
            probe: ProbeConfig::default(),
            out: PathBuf::from("taskspace-run"),
        }
    }
}

fn bad(field: &str, reason: impl Into<String>) -> CliError {
    CliError::Config {
        field: field.to_string(),
        reason: reason.into(),
    }
}

fn positive(field: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(field, format!("must be positive and finite, got {v}")))
    }
}

fn fraction(field: &str, v: f64) -> Result<(), CliError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(bad(field, format!("must lie in [0, 1], got {v}")))
    }
}

impl RunConfig {
    /// Reads `path` (or the defaults) and applies flag overrides. Relative
    /// paths inside the file resolve against the file's directory.
    pub fn load(path: Option<&Path>, seed: Option<u64>, out: Option<PathBuf>) -> Result<Self, CliError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| bad("--config", format!("{}: {e}", p.display())))?;
                let mut cfg: RunConfig =
                    serde_json::from_str(&text).map_err(|e| bad("--config", format!("{}: {e}", p.display())))?;
                let base = p.parent().unwrap_or(Path::new(""));
                let rebase = |q: &mut PathBuf| {
                    if q.is_relative() {
                        *q = base.join(&*q);
                    }
                };
                rebase(&mut cfg.out);
                if let CorpusSource::Blimp(b) = &mut cfg.corpus {
                    rebase(&mut b.path);
                    rebase(&mut b.pretrain_text);
                }
                cfg
            }
            None => RunConfig::default(),
        };
        if seed.is_some() {
            cfg.seed = seed;
        }
        if let Some(o) = out {
            cfg.out = o;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn seed(&self) -> u64 {
        self.seed.expect("validated config has a seed")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.seed.is_none() {
            return Err(bad("seed", "a seed is required (config file or --seed)"));
        }
        match &self.corpus {
            CorpusSource::Synthetic(spec) => spec.validate().map_err(|e| bad("corpus.synthetic", e.to_string()))?,
            CorpusSource::Blimp(b) => {
                if !b.path.is_dir() {
                    return Err(bad("corpus.blimp.path", format!("{} is not a directory", b.path.display())));
                }
                if !b.pretrain_text.is_file() {
                    return Err(bad(
                        "corpus.blimp.pretrain_text",
                        format!("{} is not a file", b.pretrain_text.display()),
                    ));
                }
            }
        }
        let pc = &self.pretrain_corpus;
        if pc.n_sentences == 0 {
            return Err(bad("pretrain_corpus.n_sentences", "must be at least 1"));
        }
        if !(pc.zipf_exponent >= 0.0 && pc.zipf_exponent.is_finite()) {
            return Err(bad("pretrain_corpus.zipf_exponent", "must be non-negative and finite"));
        }
        fraction("pretrain_corpus.probed_fraction", pc.probed_fraction)?;
        fraction("pretrain_corpus.validation_fraction", pc.validation_fraction)?;
        self.model
            .lm_config(1)
            .validate()
            .map_err(|e| bad("model", e.to_string()))?;
        let p = &self.pretrain;
        if p.batch == 0 {
            return Err(bad("pretrain.batch", "must be at least 1"));
        }
        positive("pretrain.lr", p.lr)?;
        if let Some(&e) = p.checkpoint_schedule.iter().find(|&&e| e > p.epochs) {
            return Err(bad(
                "pretrain.checkpoint_schedule",
                format!("epoch {e} is beyond the {} training epochs", p.epochs),
            ));
        }
        let q = &self.probe;
        positive("probe.epsilon", q.epsilon)?;
        if !(q.lr >= 0.0 && q.lr.is_finite()) {
            return Err(bad("probe.lr", format!("must be non-negative and finite, got {}", q.lr)));
        }
        if q.max_steps == 0 {
            return Err(bad("probe.max_steps", "must be at least 1"));
        }
        if q.permutations == 0 {
            return Err(bad("probe.permutations", "must be at least 1"));
        }
        if self.out.exists() && !self.out.is_dir() {
            return Err(bad("out", format!("{} exists and is not a directory", self.out.display())));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(text: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.json");
        std::fs::write(&p, text).unwrap();
        (dir, p)
    }

    #[test]
    fn defaults_need_only_a_seed() {
        let (dir, p) = write(r#"{"seed": 3, "out": "o"}"#);
        let cfg = RunConfig::load(Some(&p), None, None).unwrap();
        assert_eq!(cfg.seed(), 3);
        assert_eq!(cfg.out, dir.path().join("o"));
        assert_eq!(cfg.pretrain, PretrainConfig::default());
        assert!(matches!(
            RunConfig::load(None, None, None),
            Err(CliError::Config { ref field, .. }) if field == "seed"
        ));
        assert_eq!(RunConfig::load(None, Some(9), None).unwrap().seed(), 9);
    }

    #[test]
    fn errors_name_the_field() {
        let cases = [
            (r#"{"seed": 1, "pretrain": {"lr": -1}}"#, "pretrain.lr"),
            (r#"{"seed": 1, "probe": {"max_steps": 0}}"#, "probe.max_steps"),
            (r#"{"seed": 1, "pretrain": {"epochs": 2, "checkpoint_schedule": [3]}}"#, "pretrain.checkpoint_schedule"),
            (r#"{"seed": 1, "corpus": {"synthetic": {"phenomena": [], "paradigms_per": [], "pairs_per": 5}}}"#, "corpus.synthetic"),
            (r#"{"seed": 1, "corpus": {"blimp": {"path": "nowhere", "pretrain_text": "x"}}}"#, "corpus.blimp.path"),
            (r#"{"seed": 1, "typo": 1}"#, "--config"),
        ];
        for (text, want) in cases {
            let (_d, p) = write(text);
            match RunConfig::load(Some(&p), None, None) {
                Err(CliError::Config { field, .. }) => assert_eq!(field, want, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::load(None, Some(1), None).unwrap();
        let b = RunConfig::load(None, Some(2), None).unwrap();
        assert_eq!(a.hash(), a.clone().hash());
        assert_ne!(a.hash(), b.hash());
    }
}
