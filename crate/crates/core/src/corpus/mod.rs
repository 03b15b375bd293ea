//! Minimal-pair task suites: synthetic grammar, tokenizer, BLiMP ingestion.

mod blimp;
mod grammar;
mod vocab;

pub use blimp::{export_suite, ingest_blimp, BlimpRecord, IngestOptions, ManifestParadigm, SuiteManifest, MANIFEST_FILE};
pub use grammar::{
    generate_suite, grammar_vocab, make_pretrain_corpus, CorpusHyper, ParadigmKind, Phenomenon, PretrainCorpus,
    SuiteSpec, FRAMES,
};
pub use vocab::{split_words, Vocab, BOS_TOKEN, UNK, UNK_TOKEN};

use std::path::PathBuf;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::TokenPair;
use crate::rng::{sha256_hex, substream};

/// Fraction of each paradigm used for training.
pub const TRAIN_FRACTION: f64 = 0.85;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid suite spec at `{field}`: {reason}")]
    InvalidSpec { field: String, reason: String },
    #[error("paradigm `{paradigm}` can produce only {capacity} distinct pairs, {requested} requested")]
    TemplateExhausted {
        paradigm: String,
        capacity: usize,
        requested: usize,
    },
    #[error("paradigm `{paradigm}` has an empty {split} split ({n} pairs)")]
    EmptySplit {
        paradigm: String,
        split: &'static str,
        n: usize,
    },
    #[error("{}:{line}: {reason}", path.display())]
    Record { path: PathBuf, line: usize, reason: String },
    #[error("{}: missing field `{field}` on line {line}", path.display())]
    MissingField {
        path: PathBuf,
        line: usize,
        field: &'static str,
    },
    #[error("{}: no records", path.display())]
    EmptyFile { path: PathBuf },
    #[error("paradigm UID `{uid}` appears in both {} and {}", first.display(), second.display())]
    DuplicateUid { uid: String, first: PathBuf, second: PathBuf },
    #[error("no record files found in {}", .0.display())]
    NoRecords(PathBuf),
    #[error("a pretraining corpus can only be derived from a synthetic suite")]
    NotSynthetic,
    #[error("corpus i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MinimalPair {
    pub good: Vec<u32>,
    pub bad: Vec<u32>,
    pub paradigm: String,
}

impl MinimalPair {
    /// Token spans `(start, good_end, bad_end)` outside of which the two
    /// sentences agree.
    pub fn edit_span(&self) -> (usize, usize, usize) {
        let prefix = self.good.iter().zip(&self.bad).take_while(|(a, b)| a == b).count();
        let max_suffix = self.good.len().min(self.bad.len()) - prefix;
        let suffix = self
            .good
            .iter()
            .rev()
            .zip(self.bad.iter().rev())
            .take(max_suffix)
            .take_while(|(a, b)| a == b)
            .count();
        (prefix, self.good.len() - suffix, self.bad.len() - suffix)
    }

    /// Width of the larger side of the edit.
    pub fn edit_width(&self) -> usize {
        let (s, g, b) = self.edit_span();
        (g - s).max(b - s)
    }
}

impl TokenPair for MinimalPair {
    fn good(&self) -> &[u32] {
        &self.good
    }
    fn bad(&self) -> &[u32] {
        &self.bad
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Paradigm {
    pub id: String,
    pub phenomenon: String,
    /// Lexical frame of synthetic paradigms.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<String>,
    pub pairs: Vec<MinimalPair>,
    /// Indices into `pairs`.
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
}

impl Paradigm {
    /// Builds a paradigm with the standard 85/15 split drawn from
    /// `split_seed`.
    pub fn new(
        id: String,
        phenomenon: String,
        frame: Option<String>,
        pairs: Vec<MinimalPair>,
        split_seed: u64,
    ) -> Result<Self, CorpusError> {
        let (train, eval) = split_indices(&id, pairs.len(), split_seed)?;
        Ok(Self {
            id,
            phenomenon,
            frame,
            pairs,
            train,
            eval,
        })
    }

    pub fn train_pairs(&self) -> Vec<&MinimalPair> {
        self.train.iter().map(|&i| &self.pairs[i]).collect()
    }

    pub fn eval_pairs(&self) -> Vec<&MinimalPair> {
        self.eval.iter().map(|&i| &self.pairs[i]).collect()
    }
}

impl TokenPair for &MinimalPair {
    fn good(&self) -> &[u32] {
        &self.good
    }
    fn bad(&self) -> &[u32] {
        &self.bad
    }
}

/// Shuffled `round(0.85 n)` / remainder split. Either side empty is an
/// error.
pub fn split_indices(paradigm: &str, n: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>), CorpusError> {
    let n_train = (TRAIN_FRACTION * n as f64).round() as usize;
    for (split, size) in [("train", n_train), ("eval", n - n_train)] {
        if size == 0 {
            return Err(CorpusError::EmptySplit {
                paradigm: paradigm.to_string(),
                split,
                n,
            });
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut substream(seed, &format!("split/{paradigm}")));
    let eval = idx.split_off(n_train);
    Ok((idx, eval))
}

/// Where a suite came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SuiteOrigin {
    Synthetic { seed: u64, spec: SuiteSpec },
    Ingested { split_seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSuite {
    pub origin: SuiteOrigin,
    pub paradigms: Vec<Paradigm>,
    pub vocab: Vocab,
}

impl TaskSuite {
    pub fn paradigm_ids(&self) -> Vec<&str> {
        self.paradigms.iter().map(|p| p.id.as_str()).collect()
    }

    pub fn paradigm(&self, id: &str) -> Option<&Paradigm> {
        self.paradigms.iter().find(|p| p.id == id)
    }

    /// Phenomena in first-seen order with the indices of their paradigms.
    pub fn phenomena(&self) -> Vec<(&str, Vec<usize>)> {
        let mut out: Vec<(&str, Vec<usize>)> = Vec::new();
        for (i, p) in self.paradigms.iter().enumerate() {
            match out.iter_mut().find(|(ph, _)| *ph == p.phenomenon) {
                Some((_, v)) => v.push(i),
                None => out.push((&p.phenomenon, vec![i])),
            }
        }
        out
    }

    pub fn n_pairs(&self) -> usize {
        self.paradigms.iter().map(|p| p.pairs.len()).sum()
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("suite serializes"))
    }
}

/// Normalized token histogram over the global vocabulary, counted over the
/// good and bad sentences of the train split.
pub fn vocab_distribution(paradigm: &Paradigm, vocab_size: usize) -> Vec<f64> {
    let mut counts = vec![0usize; vocab_size];
    let mut total = 0usize;
    for p in paradigm.train_pairs() {
        for &t in p.good.iter().chain(&p.bad) {
            if let Some(c) = counts.get_mut(t as usize) {
                *c += 1;
                total += 1;
            }
        }
    }
    if total == 0 {
        return counts.into_iter().map(|_| 0.0).collect();
    }
    counts.into_iter().map(|c| c as f64 / total as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(good: &[u32], bad: &[u32]) -> MinimalPair {
        MinimalPair {
            good: good.to_vec(),
            bad: bad.to_vec(),
            paradigm: "p".into(),
        }
    }

    #[test]
    fn edit_span_of_substitution_and_insertion() {
        assert_eq!(pair(&[1, 2, 3, 4], &[1, 5, 3, 4]).edit_span(), (1, 2, 2));
        assert_eq!(pair(&[1, 2, 3, 4], &[1, 5, 3, 4]).edit_width(), 1);
        assert_eq!(pair(&[1, 2, 4], &[1, 2, 3, 4]).edit_span(), (2, 2, 3));
        assert_eq!(pair(&[1, 1], &[1, 1, 1]).edit_span(), (2, 2, 3));
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let (tr, ev) = split_indices("x", 1000, 0).unwrap();
        assert_eq!((tr.len(), ev.len()), (850, 150));
        let mut all: Vec<usize> = tr.iter().chain(&ev).copied().collect();
        all.sort();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
        assert_eq!(split_indices("x", 1000, 0).unwrap().0, tr);
        assert_ne!(split_indices("y", 1000, 0).unwrap().0, tr);
    }

    #[test]
    fn degenerate_splits_rejected() {
        for n in [0, 1, 2, 3] {
            assert!(matches!(split_indices("p", n, 0), Err(CorpusError::EmptySplit { .. })), "{n}");
        }
        assert!(split_indices("p", 4, 0).is_ok());
    }

    #[test]
    fn vocab_distribution_hand_count() {
        // vocab: <s> <unk> a b c
        let para = Paradigm {
            id: "p".into(),
            phenomenon: "q".into(),
            frame: None,
            pairs: vec![pair(&[2, 3], &[2, 4])],
            train: vec![0],
            eval: vec![],
        };
        let h = vocab_distribution(&para, 5);
        assert_eq!(h, vec![0.0, 0.0, 0.5, 0.25, 0.25]);
        assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
}
