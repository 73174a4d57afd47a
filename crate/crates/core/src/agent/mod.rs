//! Policy learners that consume relabeled reward streams, the bag-aware
//! replay buffer, and the loop alternating reward-model and policy updates.

mod alternating;
mod buffer;
mod qtable;
mod sac;

pub use alternating::{rlbr_loop, LogRow, LoopConfig, ModelRound, TrainingLog};
pub use buffer::ReplayBuffer;
pub use qtable::{QConfig, QTable};
pub use sac::{SacBatch, SacConfig, SacLite, SacStats, LOG_STD_MAX, LOG_STD_MIN};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{ircr_relabel, BaselineError, RedistributorKind, RrdConfig, RrdModel};
use crate::envlab::{Act, EnvError, Environment, GroundTruth, Obs, SeededRng, SpaceKind, Trajectory, Transition};
use crate::numcore::{NumError, Tensor};
use crate::rbt::{relabel, RbtConfig, RbtError, RbtParams, RbtTrainer};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("unknown state id {0}")]
    UnknownState(usize),
    #[error("unknown action id {0}")]
    UnknownAction(usize),
    #[error("relabeled channel has {got} entries, expected {expected}")]
    RelabelLength { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("learner does not fit the environment: {0}")]
    SpaceMismatch(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Rbt(#[from] RbtError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("log output: {0}")]
    Csv(#[from] csv::Error),
}

/// Which policy learner to build.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum LearnerKind {
    Q(QConfig),
    Sac(SacConfig),
}

impl LearnerKind {
    pub fn validate(&self) -> Result<(), AgentError> {
        match self {
            LearnerKind::Q(c) => c.validate(),
            LearnerKind::Sac(c) => c.validate(),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            LearnerKind::Q(_) => "q",
            LearnerKind::Sac(_) => "sac",
        }
    }
}

#[derive(Clone, Debug)]
pub struct QLearner {
    pub table: QTable,
    pub config: QConfig,
}

#[derive(Clone, Debug)]
pub enum Learner {
    Q(QLearner),
    Sac(Box<SacLite>),
}

fn random_action(space: SpaceKind, rng: &mut SeededRng) -> Act {
    match space {
        SpaceKind::Discrete { n_actions, .. } => Act::discrete(rng.random_range(0..n_actions), n_actions),
        SpaceKind::Continuous { action_dim, .. } => Act::continuous((0..action_dim).map(|_| rng.random_range(-1.0..1.0)).collect()),
    }
}

fn state_id(obs: &Obs, n_states: usize) -> Result<usize, AgentError> {
    match obs.id {
        Some(s) if s < n_states => Ok(s),
        Some(s) => Err(AgentError::UnknownState(s)),
        None => Err(AgentError::SpaceMismatch("tabular learner got a continuous observation".into())),
    }
}

impl Learner {
    pub fn new(kind: &LearnerKind, space: SpaceKind, rng: &mut SeededRng) -> Result<Self, AgentError> {
        kind.validate()?;
        match (kind, space) {
            (LearnerKind::Q(c), SpaceKind::Discrete { n_states, n_actions }) => {
                Ok(Learner::Q(QLearner { table: QTable::new(n_states, n_actions, c.lr, c.gamma), config: *c }))
            }
            (LearnerKind::Sac(c), SpaceKind::Continuous { state_dim, action_dim }) => {
                Ok(Learner::Sac(Box::new(SacLite::new(*c, state_dim, action_dim, rng)?)))
            }
            (k, s) => Err(AgentError::SpaceMismatch(format!("{} learner on {s:?}", k.label()))),
        }
    }

    /// Behavior action at environment step `step` of `total`.
    pub fn explore(&self, obs: &Obs, step: usize, total: usize, rng: &mut SeededRng) -> Result<Act, AgentError> {
        match self {
            Learner::Q(q) => {
                let s = state_id(obs, q.table.n_states)?;
                let n = q.table.n_actions;
                let a = if rng.random::<f64>() < q.config.epsilon(step, total) { rng.random_range(0..n) } else { q.table.greedy(s) };
                Ok(Act::discrete(a, n))
            }
            Learner::Sac(sac) => Ok(Act::continuous(sac.act(&obs.features, false, rng)?)),
        }
    }

    /// Evaluation action: greedy for Q-learning, the squashed mean for SAC.
    pub fn greedy(&self, obs: &Obs) -> Result<Act, AgentError> {
        match self {
            Learner::Q(q) => Ok(Act::discrete(q.table.greedy(state_id(obs, q.table.n_states)?), q.table.n_actions)),
            Learner::Sac(sac) => {
                let mut unused = <SeededRng as rand::SeedableRng>::seed_from_u64(0);
                Ok(Act::continuous(sac.act(&obs.features, true, &mut unused)?))
            }
        }
    }

    /// `n` policy updates on transitions drawn uniformly from `buffer`, using
    /// its relabeled rewards.
    pub fn update(&mut self, buffer: &ReplayBuffer, n: usize, rng: &mut SeededRng) -> Result<(), AgentError> {
        if buffer.n_steps() == 0 {
            return Ok(());
        }
        match self {
            Learner::Q(q) => {
                for _ in 0..n * q.config.batch {
                    let (i, t) = buffer.sample_step(rng).expect("non-empty buffer");
                    let (tr, r) = buffer.step(i, t);
                    let s = state_id(&tr.state, q.table.n_states)?;
                    let next = state_id(&tr.next_state, q.table.n_states)?;
                    let a = tr.action.id.ok_or(AgentError::UnknownAction(usize::MAX))?;
                    q.table.q_update(s, a, r, next, tr.done)?;
                }
            }
            Learner::Sac(sac) => {
                for _ in 0..n {
                    let picks: Vec<(usize, usize)> =
                        (0..sac.config.batch).map(|_| buffer.sample_step(rng).expect("non-empty buffer")).collect();
                    let rows = |f: &dyn Fn(&Transition) -> Vec<f64>| {
                        Tensor::from_rows(&picks.iter().map(|&(i, t)| f(buffer.step(i, t).0)).collect::<Vec<_>>())
                    };
                    let batch = SacBatch {
                        states: rows(&|tr| tr.state.features.clone())?,
                        actions: rows(&|tr| tr.action.features.clone())?,
                        rewards: picks.iter().map(|&(i, t)| buffer.step(i, t).1).collect(),
                        next_states: rows(&|tr| tr.next_state.features.clone())?,
                        terminal: picks.iter().map(|&(i, t)| buffer.step(i, t).0.done).collect(),
                    };
                    sac.sac_update(&batch, rng)?;
                }
            }
        }
        Ok(())
    }
}

/// Produces the per-step rewards a learner trains on.
#[derive(Clone, Debug)]
pub enum Redistributor {
    Raw,
    Ircr,
    Rrd(Box<RrdModel>),
    Rbt(Box<RbtTrainer>),
    /// The environment's own per-step rewards; for oracle comparisons only.
    Hidden(GroundTruth),
}

impl Redistributor {
    pub fn new(
        kind: RedistributorKind,
        rbt: &RbtConfig,
        rrd: &RrdConfig,
        space: SpaceKind,
        rng: &mut SeededRng,
    ) -> Result<Self, AgentError> {
        kind.validate()?;
        let (s, a) = match space {
            SpaceKind::Discrete { n_states, n_actions } => (n_states, n_actions),
            SpaceKind::Continuous { state_dim, action_dim } => (state_dim, action_dim),
        };
        Ok(match kind {
            RedistributorKind::Raw => Redistributor::Raw,
            RedistributorKind::Ircr => Redistributor::Ircr,
            RedistributorKind::Rrd { k } => Redistributor::Rrd(Box::new(RrdModel::new(RrdConfig { k, ..*rrd }, s, a, rng)?)),
            RedistributorKind::Rbt => {
                rbt.validate()?;
                let params = RbtParams::new(rbt, s, a, rng)?;
                let dropout_rng = <SeededRng as rand::SeedableRng>::seed_from_u64(rng.random());
                Redistributor::Rbt(Box::new(RbtTrainer::new(params, dropout_rng)))
            }
        })
    }

    pub fn is_learned(&self) -> bool {
        matches!(self, Redistributor::Rrd(_) | Redistributor::Rbt(_))
    }

    /// `iters` optimizer steps on the buffer; returns the mean training loss.
    pub fn train(&mut self, buffer: &ReplayBuffer, iters: usize, rng: &mut SeededRng) -> Result<Option<f64>, AgentError> {
        if iters == 0 {
            return Ok(None);
        }
        let data = buffer.observed();
        match self {
            Redistributor::Rbt(t) => {
                let stats = t.train(&data, iters, rng)?;
                Ok(Some(stats.iter().map(|s| s.loss.total).sum::<f64>() / iters as f64))
            }
            Redistributor::Rrd(m) => {
                let mut total = 0.0;
                for _ in 0..iters {
                    total += m.train_step(&data, rng)?;
                }
                Ok(Some(total / iters as f64))
            }
            _ => Ok(None),
        }
    }

    /// Rewrites the relabeled channel of every stored trajectory.
    pub fn relabel(&self, buffer: &mut ReplayBuffer) -> Result<(), AgentError> {
        let rewards: Vec<Vec<f64>> = match self {
            Redistributor::Raw => buffer.observed().iter().map(|o| o.raw_stream()).collect(),
            Redistributor::Ircr => ircr_relabel(&buffer.observed()),
            Redistributor::Rrd(m) => buffer.observed().iter().map(|o| m.predict(o)).collect::<Result<_, _>>()?,
            Redistributor::Rbt(t) => buffer.observed().iter().map(|o| relabel(&t.params, o)).collect::<Result<_, _>>()?,
            Redistributor::Hidden(g) => (0..buffer.len()).map(|i| buffer.bagged(i).hidden_rewards(*g).to_vec()).collect(),
        };
        buffer.set_all_relabeled(rewards)
    }
}

/// Runs one episode until a terminal state or the horizon.
pub fn run_episode(
    env: &mut dyn Environment,
    policy: &mut dyn FnMut(&Obs, usize) -> Result<Act, AgentError>,
    rng: &mut SeededRng,
) -> Result<Trajectory, AgentError> {
    let mut obs = env.reset(rng);
    let (mut transitions, mut hidden) = (Vec::new(), Vec::new());
    for t in 0..env.horizon() {
        let action = policy(&obs, t)?;
        let out = env.step(&action, rng)?;
        hidden.push(out.reward);
        transitions.push(Transition { state: obs, action, next_state: out.next.clone(), done: out.done });
        obs = out.next;
        if out.done {
            break;
        }
    }
    Ok(Trajectory::new(transitions, hidden))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalStats {
    pub mean: f64,
    /// Population standard deviation over episodes.
    pub std: f64,
}

/// Mean and spread of the hidden-reward return over `n_episodes` episodes.
pub fn evaluate(
    env: &mut dyn Environment,
    policy: &mut dyn FnMut(&Obs) -> Result<Act, AgentError>,
    n_episodes: usize,
    rng: &mut SeededRng,
) -> Result<EvalStats, AgentError> {
    if n_episodes == 0 {
        return Err(AgentError::Config("n_episodes must be positive".into()));
    }
    let truth = GroundTruth::evaluator();
    let returns: Vec<f64> = (0..n_episodes)
        .map(|_| Ok(run_episode(env, &mut |o, _| policy(o), rng)?.hidden_return(truth)))
        .collect::<Result<_, AgentError>>()?;
    let mean = returns.iter().sum::<f64>() / n_episodes as f64;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n_episodes as f64;
    Ok(EvalStats { mean, std: var.sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envlab::{gridworld_5x5, TabularEnv, TabularMdp};
    use crate::oracle::value_iteration;
    use rand::SeedableRng;

    #[test]
    fn random_policy_on_zero_reward_env() {
        let mdp = gridworld_5x5().with_rewards(|_, _, _| 0.0);
        let mut env = TabularEnv::new(mdp);
        let mut rng = SeededRng::seed_from_u64(1);
        let mut prng = SeededRng::seed_from_u64(2);
        let space = env.space();
        let stats = evaluate(&mut env, &mut |_| Ok(random_action(space, &mut prng)), 5, &mut rng).unwrap();
        assert_eq!((stats.mean, stats.std), (0.0, 0.0));
    }

    #[test]
    fn optimal_policy_reaches_value_iteration_optimum() {
        let mdp: TabularMdp = gridworld_5x5();
        let vi = value_iteration(&mdp, &mdp.hidden_reward).unwrap();
        let mut env = TabularEnv::new(mdp);
        let mut rng = SeededRng::seed_from_u64(3);
        let mut t = 0usize;
        let stats = evaluate(
            &mut env,
            &mut |o| {
                let a = vi.greedy_actions(t, o.id.unwrap())[0];
                t += 1;
                Ok(Act::discrete(a, 4))
            },
            1,
            &mut rng,
        )
        .unwrap();
        assert!((stats.mean - vi.root_value()).abs() < 1e-9);
        assert_eq!(stats.std, 0.0);
    }

    #[test]
    fn learner_must_fit_space() {
        let mut rng = SeededRng::seed_from_u64(4);
        let cont = SpaceKind::Continuous { state_dim: 4, action_dim: 2 };
        let disc = SpaceKind::Discrete { n_states: 3, n_actions: 2 };
        assert!(matches!(Learner::new(&LearnerKind::Q(QConfig::default()), cont, &mut rng), Err(AgentError::SpaceMismatch(_))));
        assert!(matches!(Learner::new(&LearnerKind::Sac(SacConfig::default()), disc, &mut rng), Err(AgentError::SpaceMismatch(_))));
    }
}
