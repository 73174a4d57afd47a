use std::io::Write;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::envlab::{BagRegime, BaggedTrajectory, Environment, SeededRng};

use super::{evaluate, random_action, run_episode, AgentError, Learner, Redistributor, ReplayBuffer};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopConfig {
    pub total_steps: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    /// Uniformly random behavior, and no updates, until this many steps.
    pub pretrain_steps: usize,
    /// Reward-model iterations in the first update round.
    pub pretrain_iters: usize,
    /// Reward-model iterations in each later round.
    pub iters_per_update: usize,
    /// Steps between update rounds; 0 runs a round after every trajectory.
    pub update_every: usize,
    /// Policy updates per environment step collected since the last round.
    pub policy_updates_per_step: usize,
    pub buffer_capacity: usize,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            total_steps: 100_000,
            eval_interval: 5_000,
            eval_episodes: 10,
            pretrain_steps: 10_000,
            pretrain_iters: 100,
            iters_per_update: 10,
            update_every: 0,
            policy_updates_per_step: 1,
            buffer_capacity: 1_000_000,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        if self.total_steps == 0 || self.eval_interval == 0 || self.eval_episodes == 0 || self.buffer_capacity == 0 {
            return Err(AgentError::Config(
                "total_steps, eval_interval, eval_episodes and buffer_capacity must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One evaluation point of the training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub eval_return_mean: f64,
    pub eval_return_std: f64,
    pub rbt_loss: Option<f64>,
    pub reward_residual: Option<f64>,
}

/// A reward-model update round.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelRound {
    /// Environment steps collected when the round ran.
    pub step: usize,
    pub iters: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
    pub rounds: Vec<ModelRound>,
}

impl TrainingLog {
    pub fn final_return(&self) -> Option<f64> {
        self.rows.last().map(|r| r.eval_return_mean)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), AgentError> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

fn stream(seed: u64, id: u64) -> SeededRng {
    let mut rng = SeededRng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Collect, store with bags, update the reward model, relabel the whole
/// buffer, update the policy; evaluate on the hidden reward every
/// `eval_interval` steps and once at the end.
///
/// Environment, policy, model and evaluation randomness use separate streams
/// derived from `seed`.
pub fn rlbr_loop(
    env: &mut dyn Environment,
    regime: BagRegime,
    redistributor: &mut Redistributor,
    learner: &mut Learner,
    config: &LoopConfig,
    seed: u64,
) -> Result<TrainingLog, AgentError> {
    config.validate()?;
    regime.validate()?;
    let space = env.space();
    if matches!(learner, Learner::Q(_)) != env.is_discrete() {
        return Err(AgentError::SpaceMismatch(format!("learner does not match {space:?}")));
    }
    let (mut env_rng, mut policy_rng, mut model_rng, mut eval_rng) =
        (stream(seed, 1), stream(seed, 2), stream(seed, 3), stream(seed, 4));
    let mut buffer = ReplayBuffer::new(config.buffer_capacity);
    let mut log = TrainingLog::default();
    let (mut step, mut since, mut next_eval) = (0usize, 0usize, config.eval_interval);
    let mut pretrained = false;
    let mut last_loss = None;
    while step < config.total_steps {
        let start = step;
        let traj = {
            let learner = &*learner;
            run_episode(
                env,
                &mut |obs, t| {
                    let now = start + t;
                    if now < config.pretrain_steps {
                        Ok(random_action(space, &mut policy_rng))
                    } else {
                        learner.explore(obs, now, config.total_steps, &mut policy_rng)
                    }
                },
                &mut env_rng,
            )?
        };
        let layout = regime.layout(traj.len(), &mut env_rng)?;
        step += traj.len();
        since += traj.len();
        buffer.push(BaggedTrajectory::new(traj, layout)?);

        let due = !pretrained || config.update_every == 0 || since >= config.update_every;
        if step >= config.pretrain_steps && due {
            let iters = if pretrained { config.iters_per_update } else { config.pretrain_iters };
            if redistributor.is_learned() {
                last_loss = redistributor.train(&buffer, iters, &mut model_rng)?.or(last_loss);
                log.rounds.push(ModelRound { step, iters });
            }
            pretrained = true;
            redistributor.relabel(&mut buffer)?;
            learner.update(&buffer, since * config.policy_updates_per_step, &mut policy_rng)?;
            since = 0;
        }

        let last = step >= config.total_steps;
        if step >= next_eval || last {
            let learner = &*learner;
            let stats = evaluate(env, &mut |o| learner.greedy(o), config.eval_episodes, &mut eval_rng)?;
            log.rows.push(LogRow {
                step,
                eval_return_mean: stats.mean,
                eval_return_std: stats.std,
                rbt_loss: last_loss,
                reward_residual: if pretrained { buffer.reward_residual() } else { None },
            });
            while next_eval <= step {
                next_eval += config.eval_interval;
            }
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{LearnerKind, QConfig, SacConfig};
    use crate::baselines::{RedistributorKind, RrdConfig};
    use crate::envlab::{gridworld, point_mass_env, GroundTruth, TabularEnv};
    use crate::rbt::RbtConfig;

    fn tiny_loop() -> LoopConfig {
        LoopConfig {
            total_steps: 3_000,
            eval_interval: 1_000,
            eval_episodes: 2,
            pretrain_steps: 500,
            pretrain_iters: 20,
            iters_per_update: 2,
            update_every: 250,
            ..LoopConfig::default()
        }
    }

    fn q_learner(env: &TabularEnv) -> Learner {
        Learner::new(&LearnerKind::Q(QConfig::default()), env.space(), &mut SeededRng::seed_from_u64(0)).unwrap()
    }

    fn run(kind: RedistributorKind, regime: BagRegime, cfg: &LoopConfig, seed: u64) -> TrainingLog {
        let mut env = TabularEnv::new(gridworld(3, 30));
        let rbt = RbtConfig { embed_dim: 8, n_heads: 2, seq_len: 10, relabel_len: 10, ..RbtConfig::desk() };
        let mut red = Redistributor::new(kind, &rbt, &RrdConfig::default(), env.space(), &mut stream(seed, 5)).unwrap();
        let mut learner = q_learner(&env);
        rlbr_loop(&mut env, regime, &mut red, &mut learner, cfg, seed).unwrap()
    }

    #[test]
    fn hidden_stream_equals_unbagged_raw_run() {
        let cfg = tiny_loop();
        let mut env = TabularEnv::new(gridworld(3, 30));
        let mut hidden = Redistributor::Hidden(GroundTruth::evaluator());
        let mut l1 = q_learner(&env);
        let a = rlbr_loop(&mut env, BagRegime::Fixed { len: 5 }, &mut hidden, &mut l1, &cfg, 7).unwrap();
        let b = run(RedistributorKind::Raw, BagRegime::Fixed { len: 1 }, &cfg, 7);
        assert_eq!(a, b);
        assert!(a.rows.iter().all(|r| r.reward_residual == Some(0.0)));
    }

    #[test]
    fn pretrain_schedule() {
        let cfg = LoopConfig { update_every: 0, ..tiny_loop() };
        let log = run(RedistributorKind::Rbt, BagRegime::Fixed { len: 5 }, &cfg, 1);
        let first = log.rounds[0];
        assert!(first.step >= cfg.pretrain_steps && first.iters == cfg.pretrain_iters);
        assert!(log.rounds[1..].iter().all(|r| r.iters == cfg.iters_per_update));
        assert!(log.rows.iter().filter(|r| r.step < first.step).all(|r| r.rbt_loss.is_none()));
        assert!(log.rows.last().unwrap().rbt_loss.is_some());
    }

    #[test]
    fn seed_determinism_and_csv() {
        let cfg = tiny_loop();
        let a = run(RedistributorKind::Rbt, BagRegime::Fixed { len: 5 }, &cfg, 3);
        let b = run(RedistributorKind::Rbt, BagRegime::Fixed { len: 5 }, &cfg, 3);
        assert_eq!(a, b);
        let (mut x, mut y) = (Vec::new(), Vec::new());
        a.write_csv(&mut x).unwrap();
        b.write_csv(&mut y).unwrap();
        assert_eq!(x, y);
        let text = String::from_utf8(x).unwrap();
        assert!(text.starts_with("step,eval_return_mean,eval_return_std,rbt_loss,reward_residual\n"));
        assert_eq!(text.lines().count(), a.rows.len() + 1);
        assert_eq!(a.rows.last().unwrap().step, 3_000.max(a.rows.last().unwrap().step));
    }

    #[test]
    fn relabel_residual_matches_model_residual() {
        let cfg = LoopConfig { total_steps: 1_000, ..tiny_loop() };
        let mut env = TabularEnv::new(gridworld(3, 30));
        let rbt = RbtConfig { embed_dim: 8, n_heads: 2, seq_len: 10, relabel_len: 10, ..RbtConfig::desk() };
        let mut red =
            Redistributor::new(RedistributorKind::Rbt, &rbt, &RrdConfig::default(), env.space(), &mut stream(2, 5)).unwrap();
        let mut learner = q_learner(&env);
        let log = rlbr_loop(&mut env, BagRegime::Fixed { len: 5 }, &mut red, &mut learner, &cfg, 2).unwrap();
        let Redistributor::Rbt(trainer) = &red else { unreachable!() };
        let logged = log.rows.last().unwrap().reward_residual.unwrap();
        assert!(logged.is_finite() && logged >= 0.0);
        let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
        let mut env_rng = stream(2, 1);
        let mut prng = stream(2, 99);
        let space = env.space();
        for _ in 0..3 {
            let traj = run_episode(&mut env, &mut |_, _| Ok(random_action(space, &mut prng)), &mut env_rng).unwrap();
            let layout = BagRegime::Fixed { len: 5 }.layout(traj.len(), &mut env_rng).unwrap();
            buffer.push(BaggedTrajectory::new(traj, layout).unwrap());
        }
        red.relabel(&mut buffer).unwrap();
        let via_buffer = buffer.reward_residual().unwrap();
        let direct = crate::rbt::bag_residual(&trainer.params, &buffer.observed()).unwrap();
        assert!((via_buffer - direct).abs() < 1e-12);
    }

    #[test]
    fn other_redistributors_run() {
        let cfg = tiny_loop();
        for kind in [RedistributorKind::Ircr, RedistributorKind::Rrd { k: 3 }] {
            let log = run(kind, BagRegime::Trajectory, &cfg, 4);
            assert!(log.rows.iter().all(|r| r.eval_return_mean.is_finite()));
        }
    }

    #[test]
    fn sac_on_point_mass_runs() {
        let mut env = point_mass_env(50);
        let cfg = LoopConfig { total_steps: 600, eval_interval: 300, pretrain_steps: 200, update_every: 100, ..tiny_loop() };
        let sac = SacConfig { hidden: 16, batch: 16, ..SacConfig::default() };
        let mut learner = Learner::new(&LearnerKind::Sac(sac), env.space(), &mut SeededRng::seed_from_u64(0)).unwrap();
        let rbt = RbtConfig { embed_dim: 8, n_heads: 2, seq_len: 10, relabel_len: 10, ..RbtConfig::desk() };
        let mut red =
            Redistributor::new(RedistributorKind::Rbt, &rbt, &RrdConfig::default(), env.space(), &mut stream(0, 5)).unwrap();
        let log = rlbr_loop(&mut env, BagRegime::Fixed { len: 10 }, &mut red, &mut learner, &cfg, 0).unwrap();
        assert_eq!(log.rows.len(), 2);
        assert!(log.rows.iter().all(|r| r.eval_return_mean.is_finite() && r.eval_return_mean < 0.0));
    }

    #[test]
    fn mismatched_learner_rejected() {
        let mut env = point_mass_env(10);
        let mut learner = q_learner(&TabularEnv::new(gridworld(3, 30)));
        let r = rlbr_loop(&mut env, BagRegime::Trajectory, &mut Redistributor::Raw, &mut learner, &tiny_loop(), 0);
        assert!(matches!(r, Err(AgentError::SpaceMismatch(_))));
    }
}
