use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::DEFAULT_ROPE_THETA;

/// Shape and constants of a decoder-only transformer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub n_classes: usize,
    #[serde(default = "default_rope_theta")]
    pub rope_theta: f64,
    #[serde(default = "default_rmsnorm_eps")]
    pub rmsnorm_eps: f64,
}

fn default_rope_theta() -> f64 {
    DEFAULT_ROPE_THETA
}

fn default_rmsnorm_eps() -> f64 {
    1e-6
}

impl Default for ModelConfig {
    /// The desk-scale configuration: 2 layers, width 64, 4 heads.
    fn default() -> Self {
        Self {
            vocab_size: crate::tokenizer::DEFAULT_VOCAB_SIZE,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 128,
            max_seq_len: 128,
            n_classes: 2,
            rope_theta: default_rope_theta(),
            rmsnorm_eps: default_rmsnorm_eps(),
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("max_seq_len", self.max_seq_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !self.head_dim().is_multiple_of(2) {
            return Err(Error::config(format!(
                "head dimension {} must be even for rotary embeddings",
                self.head_dim()
            )));
        }
        if self.n_classes < 2 {
            return Err(Error::config(format!(
                "n_classes must be at least 2, got {}",
                self.n_classes
            )));
        }
        if self.rope_theta.is_nan()
            || self.rope_theta <= 0.0
            || self.rmsnorm_eps.is_nan()
            || self.rmsnorm_eps <= 0.0
        {
            return Err(Error::config("rope_theta and rmsnorm_eps must be positive"));
        }
        Ok(())
    }

    /// Parameter count from the configuration alone:
    /// embedding, per-layer attention, feed-forward and norm gains, final
    /// norm, language-model head and classifier head.
    pub fn base_param_count(&self) -> usize {
        let d = self.d_model;
        let per_layer = 4 * d * d + 3 * d * self.d_ff + 2 * d;
        self.vocab_size * d
            + self.n_layers * per_layer
            + d
            + d * self.vocab_size
            + d * self.n_classes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_rules() {
        assert!(ModelConfig::default().validate().is_ok());
        let bad_heads = ModelConfig {
            n_heads: 5,
            ..ModelConfig::default()
        };
        assert!(matches!(bad_heads.validate(), Err(Error::Config(_))));
        let odd_head = ModelConfig {
            d_model: 12,
            n_heads: 4,
            ..ModelConfig::default()
        };
        assert!(odd_head.validate().is_err());
        let one_class = ModelConfig {
            n_classes: 1,
            ..ModelConfig::default()
        };
        assert!(one_class.validate().is_err());
    }
}
