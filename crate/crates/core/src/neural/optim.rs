//! First-order optimizers over `NetworkParams`: plain/momentum SGD and an
//! adam-style update, with optional global-norm gradient clipping.

use super::NetworkParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy)]
pub struct OptimizerConfig {
    pub kind: OptKind,
    pub learning_rate: f64,
    /// SGD only; 0 gives the plain update p -= lr * g.
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Rescale the whole gradient when its global norm exceeds this.
    pub gradient_clip_norm: Option<f64>,
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptKind::Sgd,
            learning_rate,
            momentum: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            gradient_clip_norm: None,
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptKind::Adam,
            ..OptimizerConfig::sgd(learning_rate)
        }
    }

    pub fn with_clip(mut self, clip: f64) -> Self {
        self.gradient_clip_norm = Some(clip);
        self
    }
}

/// Optimizer slots (momentum / first and second moments) plus step counter.
#[derive(Debug, Clone)]
pub struct OptState {
    m: NetworkParams,
    v: NetworkParams,
    step: u64,
}

impl OptState {
    pub fn new(params: &NetworkParams) -> Self {
        OptState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// Applies one update in place. Non-finite gradients fail fast rather than
/// poisoning the parameters.
pub fn optimize_step(
    params: &mut NetworkParams,
    grads: &NetworkParams,
    state: &mut OptState,
    cfg: &OptimizerConfig,
) -> Result<()> {
    for (name, g) in grads.iter() {
        if g.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::training(format!(
                "non-finite gradient in tensor `{name}`"
            )));
        }
    }
    let mut clip_scale = 1.0;
    if let Some(max_norm) = cfg.gradient_clip_norm {
        let norm = grads.global_norm();
        if norm > max_norm {
            clip_scale = max_norm / norm;
        }
    }
    state.step += 1;
    match cfg.kind {
        OptKind::Sgd => {
            let names: Vec<String> = grads.iter().map(|(n, _)| n.to_string()).collect();
            for name in names {
                let g = grads.get(&name)?.clone();
                if cfg.momentum != 0.0 {
                    let vel = state.m.get_mut(&name)?;
                    for (v, gi) in vel.data.iter_mut().zip(g.data.iter()) {
                        *v = cfg.momentum * *v + clip_scale * gi;
                    }
                    let vel = state.m.get(&name)?.clone();
                    let p = params.get_mut(&name)?;
                    for (pi, vi) in p.data.iter_mut().zip(vel.data.iter()) {
                        *pi -= cfg.learning_rate * vi;
                    }
                } else {
                    let p = params.get_mut(&name)?;
                    for (pi, gi) in p.data.iter_mut().zip(g.data.iter()) {
                        *pi -= cfg.learning_rate * clip_scale * gi;
                    }
                }
            }
        }
        OptKind::Adam => {
            let t = state.step as f64;
            let bc1 = 1.0 - cfg.beta1.powf(t);
            let bc2 = 1.0 - cfg.beta2.powf(t);
            let names: Vec<String> = grads.iter().map(|(n, _)| n.to_string()).collect();
            for name in names {
                let g = grads.get(&name)?.clone();
                {
                    let m = state.m.get_mut(&name)?;
                    for (mi, gi) in m.data.iter_mut().zip(g.data.iter()) {
                        *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * clip_scale * gi;
                    }
                }
                {
                    let v = state.v.get_mut(&name)?;
                    for (vi, gi) in v.data.iter_mut().zip(g.data.iter()) {
                        let cg = clip_scale * gi;
                        *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * cg * cg;
                    }
                }
                let m = state.m.get(&name)?.clone();
                let v = state.v.get(&name)?.clone();
                let p = params.get_mut(&name)?;
                for i in 0..p.data.len() {
                    let m_hat = m.data[i] / bc1;
                    let v_hat = v.data[i] / bc2;
                    p.data[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
                }
            }
        }
    }
    params.validate_finite()
}
