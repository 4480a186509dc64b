//! Transformer hyperparameters.

use serde::{Deserialize, Serialize};

use crate::error::{NeuralError, Result};

/// Shape and attention settings of the classifier.
///
/// With `causal = false` (the default) attention is bidirectional: query `i`
/// sees keys `j` with `|i - j| <= W`, and the classifier reads position 0
/// (the CLS token). With `causal = true` query `i` sees keys in `[i - W, i]`
/// and the classifier reads the last non-padding position, since a causal
/// CLS token at position 0 would see only itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformerConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Equal to `n_heads` for plain multi-head attention.
    pub n_kv_heads: usize,
    pub d_ff: usize,
    /// Sliding-window width `W`; `None` means unlimited.
    pub swa_window: Option<usize>,
    pub causal: bool,
    pub max_len: usize,
    pub vocab_size: usize,
    pub n_classes: usize,
    pub rope_base: f64,
    pub norm_eps: f32,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        TransformerConfig {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            n_kv_heads: 2,
            d_ff: 128,
            swa_window: Some(16),
            causal: false,
            max_len: 128,
            vocab_size: 1024,
            n_classes: 2,
            rope_base: 10_000.0,
            norm_eps: 1e-6,
        }
    }
}

impl TransformerConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn kv_dim(&self) -> usize {
        self.n_kv_heads * self.head_dim()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NeuralError::InvalidConfig(m));
        if self.d_model == 0 || self.n_layers == 0 || self.n_heads == 0 || self.n_kv_heads == 0 {
            return bad("d_model, n_layers, n_heads and n_kv_heads must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if !self.n_heads.is_multiple_of(self.n_kv_heads) {
            return bad(format!(
                "n_heads {} is not divisible by n_kv_heads {}",
                self.n_heads, self.n_kv_heads
            ));
        }
        if !self.head_dim().is_multiple_of(2) {
            return bad(format!("head dimension {} must be even", self.head_dim()));
        }
        if self.swa_window == Some(0) {
            return bad("sliding window must be >= 1".into());
        }
        if self.d_ff == 0 || self.max_len < 2 || self.n_classes < 2 {
            return bad("need d_ff >= 1, max_len >= 2 and n_classes >= 2".into());
        }
        if self.vocab_size < threatbench_core::tokenizer::MIN_VOCAB {
            return bad(format!(
                "vocab_size {} is below the byte vocabulary floor {}",
                self.vocab_size,
                threatbench_core::tokenizer::MIN_VOCAB
            ));
        }
        if !(self.rope_base > 1.0) || !(self.norm_eps > 0.0) {
            return bad("rope_base must exceed 1 and norm_eps must be positive".into());
        }
        Ok(())
    }
}
