use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::Parameter;

/// Learning-rate schedule.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    #[default]
    Constant,
    /// Linear rise from 0 over `warmup_steps`, then a half cosine down to
    /// `final_lr` at `total_steps` (defaults to the run's step budget).
    WarmupCosine {
        warmup_steps: u64,
        final_lr: f64,
        #[serde(default)]
        total_steps: Option<u64>,
    },
}

/// Learning rate for optimizer step `step` (0-based). `horizon` is the
/// step budget used when the schedule does not fix `total_steps`.
pub fn schedule_lr(step: u64, cfg: &TrainConfig, horizon: u64) -> f64 {
    let peak = cfg.learning_rate;
    match cfg.schedule {
        Schedule::Constant => peak,
        Schedule::WarmupCosine {
            warmup_steps,
            final_lr,
            total_steps,
        } => {
            if step < warmup_steps {
                return peak * step as f64 / warmup_steps as f64;
            }
            let total = total_steps.unwrap_or(horizon).max(warmup_steps);
            if total == warmup_steps {
                return peak;
            }
            let progress = ((step - warmup_steps) as f64 / (total - warmup_steps) as f64).min(1.0);
            final_lr + (peak - final_lr) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
        }
    }
}

/// Scales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let scale = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= scale);
    }
    norm
}

/// First and second moment buffers, one per parameter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn for_params(params: &[Parameter]) -> Self {
        AdamState {
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.tensor.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.tensor.numel()]).collect(),
        }
    }
}

/// One AdamW update: decoupled decay `θ ← θ − lr·wd·θ`, then the
/// bias-corrected Adam step.
pub fn adamw_step(
    params: &mut [Parameter],
    grads: &[Option<Vec<f64>>],
    state: &mut AdamState,
    cfg: &TrainConfig,
    lr: f64,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Usage(format!(
            "{} parameters, {} gradients, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        match g {
            None => return Err(Error::Usage(format!("missing gradient for `{}`", p.name))),
            Some(g) if g.len() != p.tensor.numel() => {
                return Err(Error::Usage(format!(
                    "gradient for `{}` has the wrong size",
                    p.name
                )))
            }
            _ => {}
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let decay = 1.0 - lr * cfg.weight_decay;
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        let g = g.as_ref().expect("checked above");
        for (i, theta) in p.tensor.data_mut().iter_mut().enumerate() {
            *theta *= decay;
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            *theta -= lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_param(x: f64) -> Vec<Parameter> {
        vec![Parameter {
            name: "theta".into(),
            tensor: Tensor::vector(vec![x]),
        }]
    }

    #[test]
    fn one_step_hand_trace() {
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let mut p = scalar_param(0.0);
        let mut st = AdamState::for_params(&p);
        adamw_step(&mut p, &[Some(vec![1.0])], &mut st, &cfg, 0.1).unwrap();
        assert!((p[0].tensor.data()[0] + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn zero_grad_no_decay_is_noop() {
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let mut p = scalar_param(0.7);
        let mut st = AdamState::for_params(&p);
        adamw_step(&mut p, &[Some(vec![0.0])], &mut st, &cfg, 0.1).unwrap();
        assert_eq!(p[0].tensor.data()[0], 0.7);
    }

    #[test]
    fn decay_is_geometric() {
        let cfg = TrainConfig {
            weight_decay: 0.5,
            ..TrainConfig::default()
        };
        let mut p = scalar_param(2.0);
        let mut st = AdamState::for_params(&p);
        for _ in 0..3 {
            adamw_step(&mut p, &[Some(vec![0.0])], &mut st, &cfg, 0.1).unwrap();
        }
        assert!((p[0].tensor.data()[0] - 2.0 * 0.95f64.powi(3)).abs() < 1e-15);
    }

    #[test]
    fn missing_grad_is_usage_error() {
        let mut p = scalar_param(0.0);
        let mut st = AdamState::for_params(&p);
        let r = adamw_step(&mut p, &[None], &mut st, &TrainConfig::default(), 0.1);
        assert!(matches!(r, Err(Error::Usage(_))));
    }

    #[test]
    fn clipping() {
        let mut g = vec![vec![3.0, 4.0]];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0][0] - 0.6).abs() < 1e-15 && (g[0][1] - 0.8).abs() < 1e-15);
        let mut small = vec![vec![0.3], vec![0.4]];
        clip_grad_norm(&mut small, 1.0);
        assert_eq!(small, vec![vec![0.3], vec![0.4]]);
    }

    #[test]
    fn schedules() {
        let c = TrainConfig::default();
        assert_eq!(schedule_lr(0, &c, 10), c.learning_rate);
        assert_eq!(schedule_lr(1_000_000, &c, 10), c.learning_rate);
        let w = TrainConfig {
            learning_rate: 1e-3,
            schedule: Schedule::WarmupCosine {
                warmup_steps: 10,
                final_lr: 1e-5,
                total_steps: Some(110),
            },
            ..TrainConfig::default()
        };
        assert_eq!(schedule_lr(0, &w, 0), 0.0);
        assert_eq!(schedule_lr(10, &w, 0), 1e-3);
        assert!((schedule_lr(60, &w, 0) - (1e-3 + 1e-5) / 2.0).abs() < 1e-12);
        assert!((schedule_lr(110, &w, 0) - 1e-5).abs() < 1e-18);
        let no_warm = TrainConfig {
            schedule: Schedule::WarmupCosine {
                warmup_steps: 0,
                final_lr: 0.0,
                total_steps: None,
            },
            ..TrainConfig::default()
        };
        assert_eq!(schedule_lr(0, &no_warm, 100), no_warm.learning_rate);
    }
}
