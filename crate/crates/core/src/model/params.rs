use std::ops::{Deref, DerefMut, Range};

use super::LmConfig;

/// One named parameter tensor inside the flat vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Canonical flat indexing of all trainable parameters.
///
/// Tensors are ordered by module path then declaration order and
/// concatenated row-major:
///
/// ```text
/// tok_emb [V, d]
/// pos_emb [ctx, d]
/// layers.{i}.ln1.{gain,bias} [d]
/// layers.{i}.attn.{wq,bq,wk,bk,wv,bv,wo,bo}   w: [d, d], b: [d]
/// layers.{i}.ln2.{gain,bias} [d]
/// layers.{i}.ffn.{w1 [d, f], b1 [f], w2 [f, d], b2 [d]}
/// ln_f.{gain,bias} [d]
/// lm_head [V, d]          (untied only)
/// ```
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    entries: Vec<ParamEntry>,
    total: usize,
}

impl ParamLayout {
    pub fn for_config(c: &LmConfig) -> Self {
        let (d, f) = (c.d_model, c.d_ffn);
        let mut spec: Vec<(String, Vec<usize>)> = vec![
            ("tok_emb".into(), vec![c.vocab_size, d]),
            ("pos_emb".into(), vec![c.context_length, d]),
        ];
        for i in 0..c.n_layers {
            let p = |s: &str| format!("layers.{i}.{s}");
            spec.push((p("ln1.gain"), vec![d]));
            spec.push((p("ln1.bias"), vec![d]));
            for w in ["q", "k", "v", "o"] {
                spec.push((p(&format!("attn.w{w}")), vec![d, d]));
                spec.push((p(&format!("attn.b{w}")), vec![d]));
            }
            spec.push((p("ln2.gain"), vec![d]));
            spec.push((p("ln2.bias"), vec![d]));
            spec.push((p("ffn.w1"), vec![d, f]));
            spec.push((p("ffn.b1"), vec![f]));
            spec.push((p("ffn.w2"), vec![f, d]));
            spec.push((p("ffn.b2"), vec![d]));
        }
        spec.push(("ln_f.gain".into(), vec![d]));
        spec.push(("ln_f.bias".into(), vec![d]));
        if !c.tie_embeddings {
            spec.push(("lm_head".into(), vec![c.vocab_size, d]));
        }
        let mut offset = 0;
        let entries = spec
            .into_iter()
            .map(|(name, shape)| {
                let e = ParamEntry { name, shape, offset };
                offset += e.len();
                e
            })
            .collect();
        Self { entries, total: offset }
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Name of the tensor containing flat index `i`.
    pub fn name_of(&self, i: usize) -> Option<&str> {
        self.entries.iter().find(|e| e.range().contains(&i)).map(|e| e.name.as_str())
    }
}

/// A flat real vector over the canonical parameter indexing. Holds
/// gradients (and parameter values where a flat view is needed).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradientVector<S>(pub Vec<S>);

impl<S> Deref for GradientVector<S> {
    type Target = [S];
    fn deref(&self) -> &[S] {
        &self.0
    }
}

impl<S> DerefMut for GradientVector<S> {
    fn deref_mut(&mut self) -> &mut [S] {
        &mut self.0
    }
}

impl<S> From<Vec<S>> for GradientVector<S> {
    fn from(v: Vec<S>) -> Self {
        Self(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_total_equals_closed_form() {
        for tie in [true, false] {
            for layers in [0, 1, 3] {
                let c = LmConfig {
                    n_layers: layers,
                    d_model: 8,
                    n_heads: 2,
                    d_ffn: 16,
                    vocab_size: 11,
                    context_length: 5,
                    dropout_rate: 0.0,
                    tie_embeddings: tie,
                };
                assert_eq!(ParamLayout::for_config(&c).total(), c.param_count());
            }
        }
    }

    #[test]
    fn indexing_is_stable_and_contiguous() {
        let c = LmConfig::desk(50);
        let a = ParamLayout::for_config(&c);
        let b = ParamLayout::for_config(&c);
        assert_eq!(a, b);
        let mut next = 0;
        for e in a.entries() {
            assert_eq!(e.offset, next);
            next += e.len();
        }
        assert_eq!(a.entries()[0].name, "tok_emb");
        assert_eq!(a.name_of(0), Some("tok_emb"));
        assert_eq!(a.name_of(a.total() - 1), Some("ln_f.bias"));
        assert_eq!(a.name_of(a.total()), None);
    }
}
