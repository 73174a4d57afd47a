use serde::{Deserialize, Serialize};

use super::{NumError, Tensor};

/// Hyperparameters of the decoupled-weight-decay Adam optimizer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_steps: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 1e-4, weight_decay: 1e-4, warmup_steps: 100, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamWConfig {
    /// Learning rate used for the update taken at `step` (0-based): a linear ramp
    /// from 0 over `warmup_steps`, constant afterwards.
    pub fn effective_lr(&self, step: u64) -> f64 {
        if self.warmup_steps == 0 {
            return self.lr;
        }
        self.lr * step.min(self.warmup_steps) as f64 / self.warmup_steps as f64
    }
}

/// Moment estimates plus the step counter.
#[derive(Clone, Debug)]
pub struct OptimState {
    pub config: AdamWConfig,
    pub step: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

impl OptimState {
    pub fn new<'a>(config: AdamWConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let first_moment: Vec<Tensor> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        let second_moment = first_moment.clone();
        Self { config, step: 0, first_moment, second_moment }
    }
}

/// One AdamW update in place.
pub fn adamw_step(params: &mut [&mut Tensor], grads: &[Tensor], state: &mut OptimState) -> Result<(), NumError> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(NumError::ParamCount { params: params.len(), grads: grads.len() });
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.first_moment) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(NumError::ShapeMismatch { op: "adamw_step", left: p.shape().to_vec(), right: g.shape().to_vec() });
        }
    }
    let c = state.config;
    let lr = c.effective_lr(state.step);
    let t = (state.step + 1) as i32;
    let bias1 = 1.0 - c.beta1.powi(t);
    let bias2 = 1.0 - c.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.first_moment[i].data_mut();
        let v = state.second_moment[i].data_mut();
        for (j, (pv, &gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gv;
            v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gv * gv;
            let m_hat = m[j] / bias1;
            let v_hat = v[j] / bias2;
            *pv -= lr * (m_hat / (v_hat.sqrt() + c.eps) + c.weight_decay * *pv);
        }
    }
    state.step += 1;
    Ok(())
}

/// Global L2 norm over a gradient list.
pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(Tensor::norm_sq).sum::<f64>().sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}
