use serde::{Deserialize, Serialize};

use super::ModelError;

/// Architecture of a decoder-only transformer.
///
/// Positions are learned embeddings; with `tie_embeddings` the output
/// projection reuses the token embedding table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ffn: usize,
    pub vocab_size: usize,
    pub context_length: usize,
    pub dropout_rate: f64,
    pub tie_embeddings: bool,
}

impl LmConfig {
    /// Desk-scale default: 2 layers, width 64, 2 heads, ffn 256, context 64.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            n_layers: 2,
            d_model: 64,
            n_heads: 2,
            d_ffn: 256,
            vocab_size,
            context_length: 64,
            dropout_rate: 0.1,
            tie_embeddings: true,
        }
    }

    /// The three published model scales (27M, 70M, 203M parameters at a
    /// wiki103-sized vocabulary), indexed 0..3.
    pub fn published(scale: usize, vocab_size: usize) -> Option<Self> {
        let (n_layers, d_model, n_heads, d_ffn) = match scale {
            0 => (3, 256, 4, 1024),
            1 => (6, 512, 8, 2048),
            2 => (12, 1024, 16, 4096),
            _ => return None,
        };
        Some(Self {
            n_layers,
            d_model,
            n_heads,
            d_ffn,
            vocab_size,
            context_length: 512,
            dropout_rate: 0.1,
            tie_embeddings: true,
        })
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.d_model == 0 || self.n_heads == 0 || self.d_ffn == 0 || self.vocab_size == 0 || self.context_length == 0 {
            return bad("all extents must be at least 1".into());
        }
        if self.d_model % self.n_heads != 0 {
            return bad(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Closed-form trainable parameter count.
    pub fn param_count(&self) -> usize {
        let (d, f, v) = (self.d_model, self.d_ffn, self.vocab_size);
        let per_layer = 4 * d * d + 4 * d + 2 * d * f + f + d + 2 * 2 * d;
        let head = if self.tie_embeddings { 0 } else { v * d };
        v * d + self.context_length * d + self.n_layers * per_layer + 2 * d + head
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> LmConfig {
        LmConfig {
            n_layers: 2,
            d_model: 32,
            n_heads: 2,
            d_ffn: 128,
            vocab_size: 64,
            context_length: 32,
            dropout_rate: 0.0,
            tie_embeddings: true,
        }
    }

    #[test]
    fn count_matches_hand_sum() {
        // embed 64*32 + pos 32*32 + 2 * (4*32^2 + 4*32 + 2*32*128 + 128 + 32 + 4*32) + 2*32
        let per_layer = 4 * 1024 + 128 + 8192 + 128 + 32 + 128;
        assert_eq!(per_layer, 12704);
        assert_eq!(2048 + 1024 + 2 * per_layer + 64, 28544);
        assert_eq!(small().param_count(), 28544);
    }

    #[test]
    fn zero_layers_is_embeddings_and_final_norm() {
        let c = LmConfig { n_layers: 0, ..small() };
        assert_eq!(c.param_count(), 64 * 32 + 32 * 32 + 2 * 32);
    }

    #[test]
    fn doubling_width_quadruples_attention_weights() {
        let attn = |c: &LmConfig| 4 * c.d_model * c.d_model;
        let wide = LmConfig { d_model: 64, ..small() };
        assert_eq!(attn(&wide), 4 * attn(&small()));
        // ffn width is held fixed, so its weights only double
        let layer = |c: &LmConfig| {
            let z = LmConfig { n_layers: 0, ..c.clone() };
            c.param_count() - z.param_count()
        };
        let ratio = layer(&wide) as f64 / layer(&small()) as f64;
        assert!(ratio > 2.0 && ratio < 4.0, "{ratio}");
    }

    #[test]
    fn untied_head_adds_vocab_projection() {
        let c = LmConfig { tie_embeddings: false, ..small() };
        assert_eq!(c.param_count(), 28544 + 64 * 32);
    }

    #[test]
    fn validation() {
        assert!(small().validate().is_ok());
        assert!(LmConfig { n_heads: 3, ..small() }.validate().is_err());
        assert!(LmConfig { dropout_rate: 1.0, ..small() }.validate().is_err());
        assert!(LmConfig { vocab_size: 0, ..small() }.validate().is_err());
        assert!(LmConfig::published(0, 1000).unwrap().validate().is_ok());
        assert!(LmConfig::published(3, 1000).is_none());
    }
}
