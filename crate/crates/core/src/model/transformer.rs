use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{GradientVector, LmConfig, ModelError, ParamLayout};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

/// Reserved beginning-of-sentence id; every sequence is scored given it.
pub const BOS: u32 = 0;

const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

/// A padded batch of sentences prepared for teacher forcing.
///
/// Row `b` holds `[BOS, s_0, .., s_{n-2}]` as inputs and `s_0 .. s_{n-1}`
/// as targets, so every token of the sentence is predicted.
#[derive(Debug, Clone)]
pub struct TokenBatch {
    inputs: Vec<usize>,
    targets: Vec<Option<usize>>,
    lengths: Vec<usize>,
    seq: usize,
}

impl TokenBatch {
    pub fn new(sentences: &[&[u32]], config: &LmConfig) -> Result<Self, ModelError> {
        if sentences.is_empty() {
            return Err(ModelError::EmptyInput("batch"));
        }
        let mut seq = 0;
        for s in sentences {
            if s.is_empty() {
                return Err(ModelError::EmptySentence);
            }
            if s.len() > config.context_length {
                return Err(ModelError::SentenceTooLong {
                    len: s.len(),
                    context: config.context_length,
                });
            }
            if let Some(&t) = s.iter().find(|&&t| t as usize >= config.vocab_size) {
                return Err(ModelError::TokenOutOfVocab {
                    token: t,
                    vocab: config.vocab_size,
                });
            }
            seq = seq.max(s.len());
        }
        let mut inputs = Vec::with_capacity(sentences.len() * seq);
        let mut targets = Vec::with_capacity(sentences.len() * seq);
        for s in sentences {
            inputs.push(BOS as usize);
            inputs.extend(s[..s.len() - 1].iter().map(|&t| t as usize));
            inputs.extend(std::iter::repeat_n(BOS as usize, seq - s.len()));
            targets.extend(s.iter().map(|&t| Some(t as usize)));
            targets.extend(std::iter::repeat_n(None, seq - s.len()));
        }
        Ok(Self {
            inputs,
            targets,
            lengths: sentences.iter().map(|s| s.len()).collect(),
            seq,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.lengths.len()
    }

    pub fn seq_len(&self) -> usize {
        self.seq
    }

    /// Number of scored tokens.
    pub fn n_targets(&self) -> usize {
        self.lengths.iter().sum()
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }
}

/// Decoder-only transformer with pre-norm blocks and learned positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Transformer<S> {
    config: LmConfig,
    layout: Arc<ParamLayout>,
    params: Vec<S>,
}

struct Dropout<'a> {
    rng: &'a mut ChaCha8Rng,
    rate: f64,
}

impl<S: Scalar> Transformer<S> {
    /// Gaussian initialization (std 0.02) for matrices and embeddings,
    /// zeros for biases, ones for norm gains.
    pub fn init(config: LmConfig, rng: &mut ChaCha8Rng) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = ParamLayout::for_config(&config);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut params = vec![S::zero(); layout.total()];
        for e in layout.entries() {
            let slice = &mut params[e.range()];
            if e.name.ends_with(".gain") {
                slice.fill(S::one());
            } else if e.shape.len() == 2 {
                for v in slice.iter_mut() {
                    *v = S::of(normal.sample(rng));
                }
            }
        }
        Ok(Self {
            config,
            layout: Arc::new(layout),
            params,
        })
    }

    pub fn from_params(config: LmConfig, params: Vec<S>) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = ParamLayout::for_config(&config);
        if layout.total() != params.len() {
            return Err(ModelError::ParamCount {
                expected: layout.total(),
                found: params.len(),
            });
        }
        Ok(Self {
            config,
            layout: Arc::new(layout),
            params,
        })
    }

    pub fn config(&self) -> &LmConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn params(&self) -> &[S] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [S] {
        &mut self.params
    }

    pub fn into_params(self) -> Vec<S> {
        self.params
    }

    fn register(&self, tape: &mut Tape<S>) -> Vec<Var> {
        self.layout
            .entries()
            .iter()
            .map(|e| {
                let t = Tensor::new(e.shape.clone(), self.params[e.range()].to_vec()).expect("layout shapes are valid");
                tape.param(e.name.clone(), t)
            })
            .collect()
    }

    fn dropout(&self, tape: &mut Tape<S>, x: Var, drop: &mut Option<Dropout<'_>>) -> Result<Var, ModelError> {
        let Some(d) = drop.as_mut() else { return Ok(x) };
        if d.rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - d.rate;
        let scale = S::of(1.0 / keep);
        let shape = tape.value(x).shape().to_vec();
        let n = tape.value(x).len();
        let mask: Vec<S> = (0..n)
            .map(|_| if d.rng.random::<f64>() < keep { scale } else { S::zero() })
            .collect();
        let m = tape.constant(Tensor::new(shape, mask)?);
        Ok(tape.mul(x, m)?)
    }

    /// Records the forward pass and returns the `[B, T, V]` logits.
    fn build(&self, tape: &mut Tape<S>, batch: &TokenBatch, mut drop: Option<Dropout<'_>>) -> Result<Var, ModelError> {
        let c = &self.config;
        let p = self.register(tape);
        let mut it = p.iter().copied();
        let mut next = || it.next().expect("layout order");
        let (tok_emb, pos_emb) = (next(), next());
        let (b, t) = (batch.batch_size(), batch.seq_len());
        let positions: Vec<usize> = (0..b).flat_map(|_| 0..t).collect();
        let te = tape.embedding(tok_emb, &batch.inputs, &[b, t])?;
        let pe = tape.embedding(pos_emb, &positions, &[b, t])?;
        let mut x = tape.add(te, pe)?;
        x = self.dropout(tape, x, &mut drop)?;
        let inv_sqrt = S::of(1.0 / (c.head_dim() as f64).sqrt());
        let eps = S::of(LN_EPS);
        for _ in 0..c.n_layers {
            let (g1, b1) = (next(), next());
            let (wq, bq, wk, bk, wv, bv, wo, bo) = (next(), next(), next(), next(), next(), next(), next(), next());
            let (g2, b2) = (next(), next());
            let (w1, fb1, w2, fb2) = (next(), next(), next(), next());

            let h = tape.layer_norm(x, g1, b1, eps)?;
            let q = tape.matmul(h, wq, false)?;
            let q = tape.add_bias(q, bq)?;
            let k = tape.matmul(h, wk, false)?;
            let k = tape.add_bias(k, bk)?;
            let v = tape.matmul(h, wv, false)?;
            let v = tape.add_bias(v, bv)?;
            let qh = tape.split_heads(q, c.n_heads)?;
            let kh = tape.split_heads(k, c.n_heads)?;
            let vh = tape.split_heads(v, c.n_heads)?;
            let scores = tape.batch_matmul(qh, kh, true)?;
            let scores = tape.scale(scores, inv_sqrt);
            let scores = tape.causal_mask(scores)?;
            let attn = tape.softmax(scores);
            let ctx = tape.batch_matmul(attn, vh, false)?;
            let ctx = tape.merge_heads(ctx, c.n_heads)?;
            let o = tape.matmul(ctx, wo, false)?;
            let o = tape.add_bias(o, bo)?;
            let o = self.dropout(tape, o, &mut drop)?;
            x = tape.add(x, o)?;

            let h = tape.layer_norm(x, g2, b2, eps)?;
            let f = tape.matmul(h, w1, false)?;
            let f = tape.add_bias(f, fb1)?;
            let f = tape.gelu(f);
            let f = tape.matmul(f, w2, false)?;
            let f = tape.add_bias(f, fb2)?;
            let f = self.dropout(tape, f, &mut drop)?;
            x = tape.add(x, f)?;
        }
        let (gf, bf) = (next(), next());
        let h = tape.layer_norm(x, gf, bf, eps)?;
        let head = if c.tie_embeddings { tok_emb } else { next() };
        Ok(tape.matmul(h, head, true)?)
    }

    /// Untraced forward pass returning `[B, T, V]` logits.
    pub fn logits(&self, batch: &TokenBatch) -> Result<Tensor<S>, ModelError> {
        let mut tape = Tape::untraced();
        let l = self.build(&mut tape, batch, None)?;
        Ok(tape.value(l).clone())
    }

    /// Log-probability of every sentence in the batch (sum over tokens).
    pub fn sentence_logprobs(&self, batch: &TokenBatch) -> Result<Vec<S>, ModelError> {
        let logits = self.logits(batch)?;
        let v = logits.cols();
        let t = batch.seq_len();
        let mut out = vec![S::zero(); batch.batch_size()];
        for (r, (row, tgt)) in logits.data().chunks(v).zip(&batch.targets).enumerate() {
            if let Some(y) = *tgt {
                out[r / t] += row[y] - crate::tensor::log_sum_exp(row);
            }
        }
        Ok(out)
    }

    /// Records the loss `sum(token NLL) / denom` on a tape. With `dropout`
    /// the masks are drawn from `rng` at the configured rate.
    pub fn record_loss(
        &self,
        tape: &mut Tape<S>,
        batch: &TokenBatch,
        denom: S,
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<Var, ModelError> {
        let drop = dropout.map(|rng| Dropout {
            rng,
            rate: self.config.dropout_rate,
        });
        let logits = self.build(tape, batch, drop)?;
        Ok(tape.cross_entropy(logits, &batch.targets, denom)?)
    }

    /// Loss `sum(token NLL) / denom` and its gradient in the canonical
    /// flat indexing.
    pub fn loss_and_grad(
        &self,
        batch: &TokenBatch,
        denom: S,
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<(S, GradientVector<S>), ModelError> {
        let mut tape = Tape::new();
        let loss = self.record_loss(&mut tape, batch, denom, dropout)?;
        let grads = tape.backward(loss)?;
        Ok((tape.value(loss).data()[0], GradientVector(grads.flatten())))
    }

    /// Mean token cross-entropy over `sentences` and its gradient, evaluated
    /// in chunks of at most `chunk` sentences. Dropout is disabled.
    pub fn mean_loss_grad(&self, sentences: &[&[u32]], chunk: usize) -> Result<(S, GradientVector<S>), ModelError> {
        if sentences.is_empty() {
            return Err(ModelError::EmptyInput("sentences"));
        }
        let total: usize = sentences.iter().map(|s| s.len()).sum();
        let denom = S::of(total as f64);
        let mut loss = S::zero();
        let mut grad = vec![S::zero(); self.params.len()];
        for part in sentences.chunks(chunk.max(1)) {
            let batch = TokenBatch::new(part, &self.config)?;
            let (l, g) = self.loss_and_grad(&batch, denom, None)?;
            loss += l;
            for (acc, &v) in grad.iter_mut().zip(g.iter()) {
                *acc += v;
            }
        }
        Ok((loss, GradientVector(grad)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn tiny(vocab: usize) -> LmConfig {
        LmConfig {
            n_layers: 2,
            d_model: 8,
            n_heads: 2,
            d_ffn: 16,
            vocab_size: vocab,
            context_length: 8,
            dropout_rate: 0.0,
            tie_embeddings: true,
        }
    }

    #[test]
    fn batch_layout() {
        let c = tiny(10);
        let b = TokenBatch::new(&[&[3, 4, 5], &[6]], &c).unwrap();
        assert_eq!(b.seq_len(), 3);
        assert_eq!(b.inputs, vec![0, 3, 4, 0, 0, 0]);
        assert_eq!(b.targets, vec![Some(3), Some(4), Some(5), Some(6), None, None]);
        assert_eq!(b.n_targets(), 4);
    }

    #[test]
    fn batch_errors() {
        let c = tiny(10);
        assert!(matches!(TokenBatch::new(&[&[3, 10]], &c), Err(ModelError::TokenOutOfVocab { token: 10, .. })));
        assert!(matches!(TokenBatch::new(&[&[]], &c), Err(ModelError::EmptySentence)));
        assert!(matches!(
            TokenBatch::new(&[&[1; 9]], &c),
            Err(ModelError::SentenceTooLong { len: 9, context: 8 })
        ));
    }

    #[test]
    fn padding_does_not_change_scores() {
        let m = Transformer::<f64>::init(tiny(12), &mut substream(1, "init")).unwrap();
        let alone = m.sentence_logprobs(&TokenBatch::new(&[&[5, 6]], m.config()).unwrap()).unwrap();
        let padded = m
            .sentence_logprobs(&TokenBatch::new(&[&[5, 6], &[1, 2, 3, 4, 7]], m.config()).unwrap())
            .unwrap();
        assert!((alone[0] - padded[0]).abs() < 1e-12);
    }

    #[test]
    fn chunked_gradient_matches_single_batch() {
        let m = Transformer::<f64>::init(tiny(12), &mut substream(2, "init")).unwrap();
        let sents: Vec<&[u32]> = vec![&[1, 2, 3], &[4, 5], &[6, 7, 8, 9], &[10, 11]];
        let (l1, g1) = m.mean_loss_grad(&sents, 100).unwrap();
        let (l2, g2) = m.mean_loss_grad(&sents, 1).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.iter().zip(g2.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let c = tiny(12);
        let m = Transformer::<f64>::init(c.clone(), &mut substream(4, "init")).unwrap();
        let batch = TokenBatch::new(&[&[1, 2, 3, 4], &[5, 6], &[7, 8, 9]], &c).unwrap();
        let denom = batch.n_targets() as f64;
        let (_, g) = m.loss_and_grad(&batch, denom, None).unwrap();
        let f = |t: &[f64]| {
            let m = Transformer::from_params(c.clone(), t.to_vec()).unwrap();
            Ok(m.loss_and_grad(&batch, denom, None).unwrap().0)
        };
        // Below ~1e-5 the central difference is dominated by rounding.
        let coords: Vec<usize> = (0..g.len()).filter(|&i| g[i].abs() > 1e-5).collect();
        assert!(coords.len() > 100);
        let worst = crate::tensor::finite_diff_check(f, m.params(), &g, &coords, 1e-4).unwrap();
        assert!(worst < 1e-4, "{worst}");
    }

    #[test]
    fn generic_over_f32() {
        let m = Transformer::<f32>::init(tiny(12), &mut substream(3, "init")).unwrap();
        let (loss, g) = m.mean_loss_grad(&[&[1, 2, 3]], 8).unwrap();
        assert!(loss.is_finite());
        assert_eq!(g.len(), m.config().param_count());
    }
}
