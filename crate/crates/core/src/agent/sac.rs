use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::envlab::SeededRng;
use crate::numcore::{adamw_step, Activation, AdamWConfig, Mlp, OptimState, Tape, Tensor, Var};

use super::AgentError;

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
const SQUASH_EPS: f64 = 1e-6;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub hidden: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub gamma: f64,
    /// Entropy coefficient.
    pub alpha: f64,
    pub polyak: f64,
    pub batch: usize,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self { hidden: 64, actor_lr: 3e-4, critic_lr: 3e-4, gamma: 0.99, alpha: 0.2, polyak: 0.005, batch: 64 }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let ok = self.hidden > 0
            && self.actor_lr > 0.0
            && self.critic_lr > 0.0
            && (0.0..=1.0).contains(&self.gamma)
            && self.alpha >= 0.0
            && self.polyak > 0.0
            && self.polyak <= 1.0
            && self.batch > 0;
        if ok {
            Ok(())
        } else {
            Err(AgentError::Config(format!("invalid SAC settings {self:?}")))
        }
    }
}

/// Transitions with relabeled rewards, one row each.
#[derive(Clone, Debug, PartialEq)]
pub struct SacBatch {
    pub states: Tensor,
    pub actions: Tensor,
    pub rewards: Vec<f64>,
    pub next_states: Tensor,
    pub terminal: Vec<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SacStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
}

/// Tanh-squashed Gaussian actor, twin critics and their targets.
#[derive(Clone, Debug)]
pub struct SacLite {
    pub config: SacConfig,
    pub action_dim: usize,
    pub actor: Mlp,
    pub critics: [Mlp; 2],
    pub targets: [Mlp; 2],
    actor_optim: OptimState,
    critic_optim: [OptimState; 2],
}

fn adam(lr: f64, params: &[Tensor]) -> OptimState {
    OptimState::new(AdamWConfig { lr, weight_decay: 0.0, warmup_steps: 0, ..AdamWConfig::default() }, params)
}

fn noise(rows: usize, cols: usize, rng: &mut SeededRng) -> Tensor {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(&[rows, cols], data).expect("noise shape")
}

/// Squashed action and its log-density on the tape.
struct PolicySample {
    action: Var,
    log_prob: Var,
}

impl SacLite {
    pub fn new(config: SacConfig, state_dim: usize, action_dim: usize, rng: &mut SeededRng) -> Result<Self, AgentError> {
        config.validate()?;
        let h = config.hidden;
        let actor = Mlp::new(&[state_dim, h, h, 2 * action_dim], Activation::Relu, rng);
        let critics = [
            Mlp::new(&[state_dim + action_dim, h, h, 1], Activation::Relu, rng),
            Mlp::new(&[state_dim + action_dim, h, h, 1], Activation::Relu, rng),
        ];
        let targets = critics.clone();
        let actor_optim = adam(config.actor_lr, &actor.params);
        let critic_optim = [adam(config.critic_lr, &critics[0].params), adam(config.critic_lr, &critics[1].params)];
        Ok(Self { config, action_dim, actor, critics, targets, actor_optim, critic_optim })
    }

    fn sample_on_tape(&self, tape: &mut Tape, actor: &[Var], states: Var, eps: &Tensor) -> Result<PolicySample, AgentError> {
        let a = self.action_dim;
        let out = self.actor.forward(tape, actor, states)?;
        let mean = tape.slice_cols(out, 0, a)?;
        let raw = tape.slice_cols(out, a, 2 * a)?;
        let log_std = tape.clamp(raw, LOG_STD_MIN, LOG_STD_MAX)?;
        let std = tape.exp(log_std)?;
        let e = tape.constant(eps.clone());
        let spread = tape.mul(std, e)?;
        let u = tape.add(mean, spread)?;
        let action = tape.tanh(u)?;
        // log N(u; mean, std) = -eps^2/2 - log_std - ln(2 pi)/2, then the tanh correction
        let e2 = tape.constant(eps.map(|v| -0.5 * v * v - HALF_LN_2PI));
        let gauss = tape.sub(e2, log_std)?;
        let a2 = tape.square(action)?;
        let one_minus = tape.scale(a2, -1.0)?;
        let one_minus = tape.add_scalar(one_minus, 1.0 + SQUASH_EPS)?;
        let jac = tape.ln(one_minus)?;
        let per_dim = tape.sub(gauss, jac)?;
        let log_prob = tape.sum_cols(per_dim)?;
        Ok(PolicySample { action, log_prob })
    }

    fn q_on_tape(tape: &mut Tape, net: &Mlp, vars: &[Var], states: Var, actions: Var) -> Result<Var, AgentError> {
        let x = tape.concat_cols(&[states, actions])?;
        Ok(net.forward(tape, vars, x)?)
    }

    /// Stochastic action for one observation, or `tanh(mean)` when `deterministic`.
    pub fn act(&self, obs: &[f64], deterministic: bool, rng: &mut SeededRng) -> Result<Vec<f64>, AgentError> {
        let out = self.actor.predict(&Tensor::new(&[1, obs.len()], obs.to_vec())?)?;
        let a = self.action_dim;
        let d = out.data();
        Ok((0..a)
            .map(|j| {
                let mean = d[j];
                if deterministic {
                    return mean.tanh();
                }
                let std = d[a + j].clamp(LOG_STD_MIN, LOG_STD_MAX).exp();
                let e: f64 = StandardNormal.sample(rng);
                (mean + std * e).tanh()
            })
            .collect())
    }

    /// `y = r + gamma * (min_i Q_target_i(s', a') - alpha * log pi(a'|s'))`,
    /// with the bootstrap dropped on terminal rows and `a' ~ pi(.|s')`.
    pub fn critic_targets(&self, batch: &SacBatch, next_eps: &Tensor) -> Result<Vec<f64>, AgentError> {
        let mut tape = Tape::new();
        let actor = self.actor.bind_frozen(&mut tape);
        let next = tape.constant(batch.next_states.clone());
        let pi = self.sample_on_tape(&mut tape, &actor, next, next_eps)?;
        let t0 = self.targets[0].bind_frozen(&mut tape);
        let t1 = self.targets[1].bind_frozen(&mut tape);
        let q0 = Self::q_on_tape(&mut tape, &self.targets[0], &t0, next, pi.action)?;
        let q1 = Self::q_on_tape(&mut tape, &self.targets[1], &t1, next, pi.action)?;
        let (q0, q1, lp) = (tape.value(q0).data(), tape.value(q1).data(), tape.value(pi.log_prob).data());
        let c = &self.config;
        Ok((0..batch.rewards.len())
            .map(|i| {
                let boot = if batch.terminal[i] { 0.0 } else { q0[i].min(q1[i]) - c.alpha * lp[i] };
                batch.rewards[i] + c.gamma * boot
            })
            .collect())
    }

    /// Mean squared error of critic `i` against fixed targets, with gradients.
    pub fn critic_loss(&self, i: usize, batch: &SacBatch, targets: &[f64]) -> Result<(f64, Vec<Tensor>), AgentError> {
        let mut tape = Tape::new();
        let vars = self.critics[i].bind(&mut tape);
        let s = tape.constant(batch.states.clone());
        let a = tape.constant(batch.actions.clone());
        let q = Self::q_on_tape(&mut tape, &self.critics[i], &vars, s, a)?;
        let y = tape.constant(Tensor::new(&[targets.len(), 1], targets.to_vec())?);
        let d = tape.sub(q, y)?;
        let sq = tape.square(d)?;
        let loss = tape.mean_all(sq)?;
        let value = tape.value(loss).data()[0];
        let mut g = tape.backward(loss)?;
        Ok((value, vars.iter().map(|&v| g.take(v).expect("critic gradient")).collect()))
    }

    /// `mean(alpha * log pi(a|s) - min_i Q_i(s, a))` with `a` reparameterized.
    pub fn actor_loss(&self, states: &Tensor, eps: &Tensor) -> Result<(f64, Vec<Tensor>), AgentError> {
        let mut tape = Tape::new();
        let actor = self.actor.bind(&mut tape);
        let s = tape.constant(states.clone());
        let pi = self.sample_on_tape(&mut tape, &actor, s, eps)?;
        let c0 = self.critics[0].bind_frozen(&mut tape);
        let c1 = self.critics[1].bind_frozen(&mut tape);
        let q0 = Self::q_on_tape(&mut tape, &self.critics[0], &c0, s, pi.action)?;
        let q1 = Self::q_on_tape(&mut tape, &self.critics[1], &c1, s, pi.action)?;
        let q = tape.minimum(q0, q1)?;
        let ent = tape.scale(pi.log_prob, self.config.alpha)?;
        let obj = tape.sub(ent, q)?;
        let loss = tape.mean_all(obj)?;
        let value = tape.value(loss).data()[0];
        let mut g = tape.backward(loss)?;
        Ok((value, actor.iter().map(|&v| g.take(v).expect("actor gradient")).collect()))
    }

    /// One critic step, one actor step, then the polyak target update.
    pub fn sac_update(&mut self, batch: &SacBatch, rng: &mut SeededRng) -> Result<SacStats, AgentError> {
        let n = batch.rewards.len();
        let y = self.critic_targets(batch, &noise(n, self.action_dim, rng))?;
        let mut critic_loss = 0.0;
        for i in 0..2 {
            let (l, grads) = self.critic_loss(i, batch, &y)?;
            let mut p: Vec<&mut Tensor> = self.critics[i].params.iter_mut().collect();
            adamw_step(&mut p, &grads, &mut self.critic_optim[i])?;
            critic_loss += l;
        }
        let (actor_loss, grads) = self.actor_loss(&batch.states, &noise(n, self.action_dim, rng))?;
        let mut p: Vec<&mut Tensor> = self.actor.params.iter_mut().collect();
        adamw_step(&mut p, &grads, &mut self.actor_optim)?;
        for i in 0..2 {
            self.targets[i].polyak_from(&self.critics[i], self.config.polyak);
        }
        if !(self.actor.is_finite() && self.critics.iter().all(Mlp::is_finite)) || !critic_loss.is_finite() {
            return Err(AgentError::NonFinite("SAC parameters"));
        }
        Ok(SacStats { critic_loss, actor_loss })
    }
}
