use serde::{Deserialize, Serialize};

use super::{ModelError, TokenBatch, Transformer};
use crate::scalar::Scalar;

/// Sentences scored per forward pass during evaluation.
pub const EVAL_CHUNK: usize = 64;

/// A tokenized minimal pair.
pub trait TokenPair {
    fn good(&self) -> &[u32];
    fn bad(&self) -> &[u32];
}

impl TokenPair for (Vec<u32>, Vec<u32>) {
    fn good(&self) -> &[u32] {
        &self.0
    }
    fn bad(&self) -> &[u32] {
        &self.1
    }
}

impl TokenPair for (&[u32], &[u32]) {
    fn good(&self) -> &[u32] {
        self.0
    }
    fn bad(&self) -> &[u32] {
        self.1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub task_id: String,
    pub accuracy: f64,
    pub n_pairs: usize,
    pub correct: Vec<bool>,
}

impl EvalResult {
    pub fn from_bits(task_id: impl Into<String>, correct: Vec<bool>) -> Self {
        let n = correct.len();
        let hits = correct.iter().filter(|&&c| c).count();
        Self {
            task_id: task_id.into(),
            accuracy: if n == 0 { 0.0 } else { hits as f64 / n as f64 },
            n_pairs: n,
            correct,
        }
    }
}

/// Total log-probability of one sentence given the BOS prefix.
pub fn sentence_logprob<S: Scalar>(model: &Transformer<S>, tokens: &[u32]) -> Result<S, ModelError> {
    let batch = TokenBatch::new(&[tokens], model.config())?;
    Ok(model.sentence_logprobs(&batch)?[0])
}

fn logprobs<S: Scalar>(model: &Transformer<S>, sentences: &[&[u32]]) -> Result<Vec<S>, ModelError> {
    let mut out = Vec::with_capacity(sentences.len());
    for part in sentences.chunks(EVAL_CHUNK) {
        let batch = TokenBatch::new(part, model.config())?;
        out.extend(model.sentence_logprobs(&batch)?);
    }
    Ok(out)
}

/// Forced-choice accuracy: a pair is correct iff the grammatical sentence
/// has strictly higher total log-probability.
pub fn pair_accuracy<S: Scalar, P: TokenPair>(
    model: &Transformer<S>,
    task_id: &str,
    pairs: &[P],
) -> Result<EvalResult, ModelError> {
    if pairs.is_empty() {
        return Err(ModelError::EmptyInput("pair set"));
    }
    let sentences: Vec<&[u32]> = pairs.iter().flat_map(|p| [p.good(), p.bad()]).collect();
    let lp = logprobs(model, &sentences)?;
    let correct = lp.chunks(2).map(|c| c[0] > c[1]).collect();
    Ok(EvalResult::from_bits(task_id, correct))
}

/// Mean token-level negative log-likelihood over a set of sentences.
pub fn mean_nll<S: Scalar>(model: &Transformer<S>, sentences: &[&[u32]]) -> Result<f64, ModelError> {
    let tokens: usize = sentences.iter().map(|s| s.len()).sum();
    if tokens == 0 {
        return Err(ModelError::EmptyInput("corpus"));
    }
    let total: f64 = logprobs(model, sentences)?.iter().map(|v| v.to_f64_lossy()).sum();
    Ok(-total / tokens as f64)
}

pub fn perplexity<S: Scalar>(model: &Transformer<S>, sentences: &[&[u32]]) -> Result<f64, ModelError> {
    Ok(mean_nll(model, sentences)?.exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LmConfig;
    use crate::rng::substream;

    fn config(vocab: usize) -> LmConfig {
        LmConfig {
            n_layers: 1,
            d_model: 8,
            n_heads: 2,
            d_ffn: 16,
            vocab_size: vocab,
            context_length: 8,
            dropout_rate: 0.0,
            tie_embeddings: true,
        }
    }

    fn zeros(vocab: usize) -> Transformer<f64> {
        let c = config(vocab);
        let n = c.param_count();
        Transformer::from_params(c, vec![0.0; n]).unwrap()
    }

    fn random(vocab: usize, seed: u64) -> Transformer<f64> {
        Transformer::init(config(vocab), &mut substream(seed, "init")).unwrap()
    }

    #[test]
    fn uniform_single_token() {
        let lp = sentence_logprob(&zeros(4), &[2]).unwrap();
        assert!((lp - (0.25f64).ln()).abs() < 1e-12);
        assert!((perplexity(&zeros(4), &[&[1, 2, 3]]).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn logprob_matches_per_step_oracle() {
        let m = random(7, 3);
        let s = [3u32, 1, 6, 2, 5];
        let lp = sentence_logprob(&m, &s).unwrap();
        assert!(lp <= 0.0);
        // Re-run the model on each prefix and read off its last position.
        let mut oracle = 0.0;
        for t in 0..s.len() {
            let batch = TokenBatch::new(&[&s[..=t]], m.config()).unwrap();
            let logits = m.logits(&batch).unwrap();
            let v = logits.cols();
            let row = &logits.data()[t * v..(t + 1) * v];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            oracle += row[s[t] as usize] - lse;
        }
        assert!((lp - oracle).abs() < 1e-10, "{lp} vs {oracle}");
    }

    #[test]
    fn out_of_vocab_is_error() {
        assert!(matches!(
            sentence_logprob(&zeros(4), &[4]),
            Err(ModelError::TokenOutOfVocab { token: 4, vocab: 4 })
        ));
    }

    #[test]
    fn ties_are_incorrect_and_empty_rejected() {
        let m = zeros(5);
        let r = pair_accuracy(&m, "t", &[(vec![1u32, 2], vec![2u32, 1])]).unwrap();
        assert_eq!(r.correct, vec![false]);
        let none: [(Vec<u32>, Vec<u32>); 0] = [];
        assert!(pair_accuracy(&m, "t", &none).is_err());
        assert!(perplexity(&m, &[]).is_err());
    }

    #[test]
    fn accuracy_is_mean_of_bits() {
        let r = EvalResult::from_bits("x", vec![true, true, false, true]);
        assert_eq!(r.accuracy, 0.75);
        assert_eq!(r.n_pairs, 4);
    }

    #[test]
    fn perplexity_rises_with_worse_segment() {
        let m = random(6, 8);
        let a: &[u32] = &[1, 2, 3];
        let b: &[u32] = &[5, 5, 4, 1];
        let (na, nb) = (mean_nll(&m, &[a]).unwrap(), mean_nll(&m, &[b]).unwrap());
        let both = mean_nll(&m, &[a, b]).unwrap();
        assert!((both - (3.0 * na + 4.0 * nb) / 7.0).abs() < 1e-12);
        let (lo, hi) = if na < nb { (a, b) } else { (b, a) };
        assert!(perplexity(&m, &[lo, hi]).unwrap() >= perplexity(&m, &[lo]).unwrap());
    }

    #[test]
    fn random_init_is_near_chance_on_random_pairs() {
        use rand::Rng;
        let m = random(20, 1);
        let mut rng = substream(2, "pairs");
        let pairs: Vec<(Vec<u32>, Vec<u32>)> = (0..1000)
            .map(|_| {
                let a: Vec<u32> = (0..4).map(|_| rng.random_range(1..20)).collect();
                let b: Vec<u32> = (0..4).map(|_| rng.random_range(1..20)).collect();
                (a, b)
            })
            .collect();
        let r = pair_accuracy(&m, "rand", &pairs).unwrap();
        assert!((0.45..=0.55).contains(&r.accuracy), "{}", r.accuracy);
    }
}
