//! The classifier: token embedding, pre-norm decoder blocks with rotary
//! self-attention and a GELU MLP, final layer norm, and a linear scoring head
//! applied to the hidden state of the last sequence position.

mod checkpoint;
mod config;
mod rope;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{parameter_count, ModelConfig};
pub use rope::{attention, rope_rotate};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{sigmoid_scalar, softmax_slice, AttentionSpec, Precision, Tape, Tensor, Var};
use crate::tokenizer::TokenSequence;

const PARAMS_PER_LAYER: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Init {
    Normal,
    Ones,
    Zeros,
}

/// Named trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: Vec<Parameter>,
}

/// Handles produced by [`Model::forward`] on a tape.
pub struct Forward {
    /// `[batch × num_labels]` scores.
    pub logits: Var,
    /// `[batch·seq × hidden]` states after the final layer norm, before pooling.
    pub hidden: Var,
    /// One leaf per parameter, in [`Model::params`] order.
    pub params: Vec<Var>,
}

/// Output of [`predict`].
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// Softmax over classes, one row per input.
    pub probabilities: Vec<Vec<f64>>,
    /// Independent per-class sigmoid of each score.
    pub sigmoid_scores: Vec<Vec<f64>>,
    /// Argmax of the scores (lowest index on ties).
    pub classes: Vec<usize>,
}

fn layout(config: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = config.hidden_size;
    let kv = config.num_kv_heads * config.head_dim();
    let inter = config.intermediate_size;
    let mut out = vec![(
        "embed.weight".to_string(),
        vec![config.vocab_size, d],
        Init::Normal,
    )];
    for l in 0..config.num_layers {
        let p = |s: &str| format!("layers.{l}.{s}");
        out.extend([
            (p("attn_norm.weight"), vec![d], Init::Ones),
            (p("attn_norm.bias"), vec![d], Init::Zeros),
            (p("attn.query"), vec![d, d], Init::Normal),
            (p("attn.key"), vec![d, kv], Init::Normal),
            (p("attn.value"), vec![d, kv], Init::Normal),
            (p("attn.output"), vec![d, d], Init::Normal),
            (p("mlp_norm.weight"), vec![d], Init::Ones),
            (p("mlp_norm.bias"), vec![d], Init::Zeros),
            (p("mlp.hidden"), vec![d, inter], Init::Normal),
            (p("mlp.output"), vec![inter, d], Init::Normal),
        ]);
    }
    out.extend([
        ("final_norm.weight".to_string(), vec![d], Init::Ones),
        ("final_norm.bias".to_string(), vec![d], Init::Zeros),
        (
            "head.weight".to_string(),
            vec![d, config.num_labels],
            Init::Normal,
        ),
        (
            "head.bias".to_string(),
            vec![config.num_labels],
            Init::Zeros,
        ),
    ]);
    out
}

impl Model {
    /// Draws all weights from `Normal(0, initializer_range²)` using
    /// `config.seed`; norm scales start at 1, shifts and the head bias at 0.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, config.initializer_range)
            .map_err(|e| Error::config("initializer_range", e.to_string()))?;
        let params = layout(&config)
            .into_iter()
            .map(|(name, shape, init)| {
                let tensor = match init {
                    Init::Normal if config.initializer_range == 0.0 => Tensor::zeros(&shape),
                    Init::Normal => Tensor::from_fn(&shape, |_| normal.sample(&mut rng)),
                    Init::Ones => Tensor::full(&shape, 1.0),
                    Init::Zeros => Tensor::zeros(&shape),
                };
                Parameter {
                    name,
                    tensor: tensor.with_requires_grad(true),
                }
            })
            .collect();
        Ok(Model { config, params })
    }

    /// Rebuilds a model from stored tensors, checking names and shapes
    /// against the layout `config` implies.
    pub fn from_parts(config: ModelConfig, tensors: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let expected = layout(&config);
        if expected.len() != tensors.len() {
            return Err(Error::Input(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                tensors.len()
            )));
        }
        let params = expected
            .into_iter()
            .zip(tensors)
            .map(|((name, shape, _), (got_name, t))| {
                if name != got_name || t.shape() != shape.as_slice() {
                    return Err(Error::Input(format!(
                        "parameter `{got_name}` {:?} does not match expected `{name}` {shape:?}",
                        t.shape()
                    )));
                }
                Ok(Parameter {
                    name,
                    tensor: t.with_requires_grad(true),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Model { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params
            .iter()
            .find(|p| p.name == name)
            .map(|p| &p.tensor)
    }

    pub fn num_parameters(&self) -> u64 {
        self.params.iter().map(|p| p.tensor.numel() as u64).sum()
    }

    /// Records the full forward pass on `tape`.
    ///
    /// Every sequence must share one length. Rotary positions count from 0
    /// at the first real token, so left padding never shifts rotations.
    pub fn forward<'p, R: Rng + ?Sized>(
        &'p self,
        tape: &mut Tape<'p>,
        batch: &[TokenSequence],
        training: bool,
        rng: &mut R,
    ) -> Result<Forward> {
        let cfg = &self.config;
        let Some(first) = batch.first() else {
            return Err(Error::Input("empty batch".into()));
        };
        let seq = first.len();
        if seq == 0 {
            return Err(Error::Input(
                "sequences must contain at least one position".into(),
            ));
        }
        if seq > cfg.max_sequence_length {
            return Err(Error::Input(format!(
                "sequence length {seq} exceeds max_sequence_length {}",
                cfg.max_sequence_length
            )));
        }
        let mut ids = Vec::with_capacity(batch.len() * seq);
        let mut positions = Vec::with_capacity(batch.len() * seq);
        let mut key_mask = Vec::with_capacity(batch.len() * seq);
        for s in batch {
            if s.len() != seq || s.attention_mask.len() != seq {
                return Err(Error::Input(format!(
                    "batch sequences must share one padded length ({seq} vs {})",
                    s.len()
                )));
            }
            if s.true_length == 0 {
                return Err(Error::Input("cannot classify an empty sequence".into()));
            }
            let pads = s.pad_count();
            ids.extend(s.ids.iter().map(|&i| i as usize));
            positions.extend((0..seq).map(|t| t.saturating_sub(pads)));
            key_mask.extend(s.attention_mask.iter().map(|&m| m == 1));
        }

        let params: Vec<Var> = self.params.iter().map(|p| tape.leaf(&p.tensor)).collect();
        let head_dim = cfg.head_dim();
        let mut x = tape.embed(params[0], &ids)?;
        for l in 0..cfg.num_layers {
            let p = &params[1 + l * PARAMS_PER_LAYER..1 + (l + 1) * PARAMS_PER_LAYER];
            let normed = tape.layer_norm(x, p[0], p[1], cfg.layer_norm_eps)?;
            let mut q = tape.matmul(normed, p[2])?;
            let mut k = tape.matmul(normed, p[3])?;
            let v = tape.matmul(normed, p[4])?;
            if cfg.use_positional_rotation {
                q = tape.rope(q, &positions, head_dim, cfg.rope_base)?;
                k = tape.rope(k, &positions, head_dim, cfg.rope_base)?;
            }
            let spec = AttentionSpec {
                batch: batch.len(),
                seq,
                heads: cfg.num_heads,
                kv_heads: cfg.num_kv_heads,
                head_dim,
                causal: true,
                key_mask: key_mask.clone(),
            };
            let att = tape.attention(q, k, v, spec, cfg.attention_dropout, training, rng)?;
            let att = tape.matmul(att, p[5])?;
            let att = tape.dropout(att, cfg.hidden_dropout, training, rng)?;
            x = tape.add(x, att)?;

            let normed = tape.layer_norm(x, p[6], p[7], cfg.layer_norm_eps)?;
            let h = tape.matmul(normed, p[8])?;
            let h = tape.gelu(h);
            let h = tape.matmul(h, p[9])?;
            let h = tape.dropout(h, cfg.hidden_dropout, training, rng)?;
            x = tape.add(x, h)?;
        }
        let n = params.len();
        let hidden = tape.layer_norm(x, params[n - 4], params[n - 3], cfg.layer_norm_eps)?;
        let last: Vec<usize> = (0..batch.len()).map(|b| b * seq + seq - 1).collect();
        let pooled = tape.gather_rows(hidden, &last)?;
        let scores = tape.matmul(pooled, params[n - 2])?;
        let logits = tape.add_row(scores, params[n - 1])?;
        Ok(Forward {
            logits,
            hidden,
            params,
        })
    }

    /// Eval-mode logits for a batch of equal-length sequences.
    pub fn logits(&self, batch: &[TokenSequence]) -> Result<Tensor> {
        self.logits_with_precision(batch, Precision::F64)
    }

    pub fn logits_with_precision(
        &self,
        batch: &[TokenSequence],
        precision: Precision,
    ) -> Result<Tensor> {
        let mut tape = Tape::with_precision(precision);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(&mut tape, batch, false, &mut rng)?;
        Ok(tape.value(out.logits).clone().with_requires_grad(false))
    }

    /// Eval-mode pre-pooling hidden states `[batch·seq × hidden]`.
    pub fn hidden_states(&self, batch: &[TokenSequence]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(&mut tape, batch, false, &mut rng)?;
        Ok(tape.value(out.hidden).clone().with_requires_grad(false))
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.zero_grad());
    }
}

/// Class probabilities (softmax), per-class sigmoid scores, and the argmax
/// class of each row of `logits`.
pub fn predict(logits: &Tensor) -> Prediction {
    let c = logits.last_dim();
    let mut probabilities = Vec::new();
    let mut sigmoid_scores = Vec::new();
    let mut classes = Vec::new();
    for row in logits.data().chunks_exact(c) {
        let mut p = vec![0.0; c];
        softmax_slice(row, &mut p);
        probabilities.push(p);
        sigmoid_scores.push(row.iter().map(|&s| sigmoid_scalar(s)).collect());
        let mut best = 0;
        for (j, &s) in row.iter().enumerate() {
            if s > row[best] {
                best = j;
            }
        }
        classes.push(best);
    }
    Prediction {
        probabilities,
        sigmoid_scores,
        classes,
    }
}
