use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters. Defaults follow the reference fine-tuning
/// setup: 768 hidden, 12 layers of 12 heads, multi-query attention, 3072
/// intermediate, 65024-token vocabulary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub hidden_size: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    /// 1 for multi-query attention, `num_heads` for classic multi-head.
    pub num_kv_heads: usize,
    pub intermediate_size: usize,
    pub max_sequence_length: usize,
    pub num_labels: usize,
    pub rope_base: f64,
    pub layer_norm_eps: f64,
    pub attention_dropout: f64,
    pub hidden_dropout: f64,
    pub initializer_range: f64,
    pub use_positional_rotation: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 65024,
            hidden_size: 768,
            num_layers: 12,
            num_heads: 12,
            num_kv_heads: 1,
            intermediate_size: 3072,
            max_sequence_length: 2048,
            num_labels: 2,
            rope_base: 10000.0,
            layer_norm_eps: 1e-5,
            attention_dropout: 0.1,
            hidden_dropout: 0.1,
            initializer_range: 0.02,
            use_positional_rotation: true,
            seed: 42,
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.num_heads.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("hidden_size", self.hidden_size),
            ("num_heads", self.num_heads),
            ("num_kv_heads", self.num_kv_heads),
            ("intermediate_size", self.intermediate_size),
            ("max_sequence_length", self.max_sequence_length),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if !self.hidden_size.is_multiple_of(self.num_heads) {
            return Err(Error::config(
                "num_heads",
                format!(
                    "hidden_size {} is not divisible by {}",
                    self.hidden_size, self.num_heads
                ),
            ));
        }
        if !self.head_dim().is_multiple_of(2) {
            return Err(Error::config(
                "head_dim",
                format!(
                    "rotary encoding needs an even head dimension, got {}",
                    self.head_dim()
                ),
            ));
        }
        if self.num_kv_heads != 1 && self.num_kv_heads != self.num_heads {
            return Err(Error::config(
                "num_kv_heads",
                "must be 1 or equal to num_heads",
            ));
        }
        if self.num_labels != 2 && self.num_labels != 12 {
            return Err(Error::config(
                "num_labels",
                format!("must be 2 or 12, got {}", self.num_labels),
            ));
        }
        if !(self.rope_base > 1.0) {
            return Err(Error::config("rope_base", "must be greater than 1"));
        }
        if !(self.layer_norm_eps > 0.0) {
            return Err(Error::config("layer_norm_eps", "must be positive"));
        }
        for (field, p) in [
            ("attention_dropout", self.attention_dropout),
            ("hidden_dropout", self.hidden_dropout),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::config(field, "must lie in [0, 1)"));
            }
        }
        if !(self.initializer_range >= 0.0) {
            return Err(Error::config("initializer_range", "must be non-negative"));
        }
        Ok(())
    }
}

/// Exact number of trainable scalars implied by `config`.
pub fn parameter_count(config: &ModelConfig) -> u64 {
    let d = config.hidden_size as u64;
    let kv_width = (config.num_kv_heads * config.head_dim()) as u64;
    let inter = config.intermediate_size as u64;
    let per_layer = 2 * d // attention norm
        + d * d // query
        + 2 * d * kv_width // key, value
        + d * d // output
        + 2 * d // mlp norm
        + 2 * d * inter;
    config.vocab_size as u64 * d
        + config.num_layers as u64 * per_layer
        + 2 * d
        + d * config.num_labels as u64
        + config.num_labels as u64
}
