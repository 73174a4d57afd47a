use crate::envlab::{ObservedTrajectory, SeededRng};
use crate::numcore::{adamw_step, clip_grad_norm, OptimState, Tape, Tensor};

use super::loss::{reward_loss_sum, state_loss_sum};
use super::{relabel, BagBatch, RbtError, RbtModel, RbtParams};

/// Batch-level loss components: `total = reward + beta * state`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub reward: f64,
    pub state: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub loss: LossParts,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub clipped: bool,
}

/// Composite loss over a batch and its gradient with respect to every
/// parameter tensor. Each window gets its own tape; bag and step counts are
/// normalized across the whole batch.
pub fn loss_and_grads(
    params: &RbtParams,
    batch: &BagBatch,
    mut dropout: Option<&mut SeededRng>,
) -> Result<(LossParts, Vec<Tensor>), RbtError> {
    let c = &params.config;
    let n_bags = batch.n_bags();
    let n_valid = if c.state_decoder { batch.n_valid_steps() } else { 0 };
    if n_bags == 0 && n_valid == 0 {
        return Err(RbtError::EmptyBags);
    }
    let mut grads: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
    let mut parts = LossParts::default();
    for w in &batch.windows {
        let mut tape = Tape::new();
        let model = RbtModel::bind(&mut tape, params);
        let out = model.forward(&mut tape, &w.states, &w.actions, 0, dropout.as_deref_mut())?;
        let lr = if w.bags.is_empty() { None } else { Some(reward_loss_sum(&mut tape, out.rewards, &w.bags, n_bags as f64)?) };
        let ls = if n_valid == 0 || w.valid.is_empty() {
            None
        } else {
            Some(state_loss_sum(&mut tape, out.next_state, &w.next_states, &w.valid, n_valid as f64)?)
        };
        let total = match (lr, ls) {
            (Some(a), Some(b)) => {
                let b = tape.scale(b, c.beta)?;
                tape.add(a, b)?
            }
            (Some(a), None) => a,
            (None, Some(b)) => tape.scale(b, c.beta)?,
            (None, None) => continue,
        };
        parts.reward += lr.map_or(0.0, |v| tape.value(v).data()[0]);
        parts.state += ls.map_or(0.0, |v| tape.value(v).data()[0]);
        parts.total += tape.value(total).data()[0];
        let mut g = tape.backward(total)?;
        for (acc, &v) in grads.iter_mut().zip(model.vars()) {
            if let Some(gv) = g.take(v) {
                acc.data_mut().iter_mut().zip(gv.data()).for_each(|(a, b)| *a += b);
            }
        }
    }
    if !parts.total.is_finite() {
        return Err(RbtError::NonFiniteLoss { reward: parts.reward, state: parts.state });
    }
    Ok((parts, grads))
}

/// Loss of `params` on `batch` with dropout off.
pub fn batch_loss(params: &RbtParams, batch: &BagBatch) -> Result<LossParts, RbtError> {
    Ok(loss_and_grads(params, batch, None)?.0)
}

/// Mean over bags of `|sum_{t in B} r_hat_t - R(B)|`, with `r_hat` from [`relabel`].
pub fn bag_residual(params: &RbtParams, trajectories: &[&ObservedTrajectory]) -> Result<f64, RbtError> {
    let (mut total, mut count) = (0.0, 0usize);
    for traj in trajectories {
        let r = relabel(params, traj)?;
        for (b, big_r) in traj.layout.bags().iter().zip(&traj.bag_rewards) {
            total += (r[b.range()].iter().sum::<f64>() - big_r).abs();
            count += 1;
        }
    }
    if count == 0 {
        return Err(RbtError::EmptyBags);
    }
    Ok(total / count as f64)
}

/// Parameters, optimizer state, and the dropout RNG.
#[derive(Clone, Debug)]
pub struct RbtTrainer {
    pub params: RbtParams,
    pub optim: OptimState,
    rng: SeededRng,
}

impl RbtTrainer {
    pub fn new(params: RbtParams, rng: SeededRng) -> Self {
        let optim = OptimState::new(params.config.adamw(), params.tensors());
        Self { params, optim, rng }
    }

    pub fn steps(&self) -> u64 {
        self.optim.step
    }

    /// One clipped AdamW step on the composite loss of `batch`.
    pub fn train_step(&mut self, batch: &BagBatch) -> Result<StepStats, RbtError> {
        let dropout = (self.params.config.dropout > 0.0).then_some(&mut self.rng);
        let (loss, mut grads) = loss_and_grads(&self.params, batch, dropout)?;
        let clip = self.params.config.grad_clip;
        let grad_norm = clip_grad_norm(&mut grads, clip);
        let mut params: Vec<&mut Tensor> = self.params.tensors_mut().iter_mut().collect();
        adamw_step(&mut params, &grads, &mut self.optim)?;
        if !self.params.is_finite() {
            return Err(RbtError::NonFiniteLoss { reward: loss.reward, state: loss.state });
        }
        Ok(StepStats { loss, grad_norm, clipped: grad_norm > clip })
    }

    /// `n` steps on freshly sampled batches; returns the per-step stats.
    pub fn train(&mut self, trajectories: &[&ObservedTrajectory], n: usize, sampler: &mut SeededRng) -> Result<Vec<StepStats>, RbtError> {
        let c = &self.params.config;
        let (bs, sl) = (c.batch_size, c.seq_len);
        (0..n)
            .map(|_| {
                let batch = BagBatch::sample(trajectories, bs, sl, sampler)?;
                self.train_step(&batch)
            })
            .collect()
    }
}
