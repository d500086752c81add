use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::Result;
use crate::model::ModelConfig;

pub const ABLATION_NAMES: [&str; 5] = [
    "baseline",
    "no-positional-rotation",
    "no-special-tokens",
    "half-heads",
    "double-dropout",
];

/// A named configuration in the ablation sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationVariant {
    pub name: String,
    pub description: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// `false` means the tokenizer is retrained without domain tokens.
    pub domain_tokens: bool,
}

/// The five ablation configurations derived from `base`: the baseline,
/// rotary encoding disabled, domain tokens removed, attention heads halved
/// and both dropout rates doubled.
pub fn ablate(base_model: &ModelConfig, base_train: &TrainConfig) -> Result<Vec<AblationVariant>> {
    base_model.validate()?;
    base_train.validate()?;
    let variant = |name: &str, description: String, model: ModelConfig, domain_tokens: bool| {
        AblationVariant {
            name: name.into(),
            description,
            model,
            train: base_train.clone(),
            domain_tokens,
        }
    };
    let heads = (base_model.num_heads / 2).max(1);
    let half = ModelConfig {
        num_heads: heads,
        num_kv_heads: if base_model.num_kv_heads == base_model.num_heads {
            heads
        } else {
            base_model.num_kv_heads
        },
        ..base_model.clone()
    };
    let double = ModelConfig {
        attention_dropout: base_model.attention_dropout * 2.0,
        hidden_dropout: base_model.hidden_dropout * 2.0,
        ..base_model.clone()
    };
    let out = vec![
        variant(
            ABLATION_NAMES[0],
            "unmodified configuration".into(),
            base_model.clone(),
            true,
        ),
        variant(
            ABLATION_NAMES[1],
            "rotary position encoding removed".into(),
            ModelConfig {
                use_positional_rotation: false,
                ..base_model.clone()
            },
            true,
        ),
        variant(
            ABLATION_NAMES[2],
            "tokenizer retrained without domain tokens".into(),
            base_model.clone(),
            false,
        ),
        variant(
            ABLATION_NAMES[3],
            format!(
                "attention heads {} -> {}",
                base_model.num_heads, half.num_heads
            ),
            half,
            true,
        ),
        variant(
            ABLATION_NAMES[4],
            format!(
                "attention/hidden dropout {}/{} -> {}/{}",
                base_model.attention_dropout,
                base_model.hidden_dropout,
                double.attention_dropout,
                double.hidden_dropout
            ),
            double,
            true,
        ),
    ];
    for v in &out {
        v.model.validate()?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_variants() {
        let base = ModelConfig::default();
        let v = ablate(&base, &TrainConfig::default()).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v[0].model, base);
        assert!(!v[1].model.use_positional_rotation);
        assert!(!v[2].domain_tokens && v[2].model == base);
        assert_eq!(
            v[3].model,
            ModelConfig {
                num_heads: 6,
                ..base.clone()
            }
        );
        assert_eq!(
            (v[4].model.attention_dropout, v[4].model.hidden_dropout),
            (0.2, 0.2)
        );
    }
}
