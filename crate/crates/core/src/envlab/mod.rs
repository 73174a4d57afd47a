//! Desk-scale environments with hidden per-step rewards, bag partitioners, and
//! the wrapper that turns hidden rewards into bagged rewards.

mod layout;
mod mdp;
mod point_mass;
mod record;
mod trajectory;

pub use layout::{partition_arbitrary, partition_fixed, BagLayout, BagRegime, BagSpec, LayoutKind, TRAJECTORY_ALIAS};
pub use mdp::{chain_mdp, gridworld, gridworld_5x5, TabularEnv, TabularMdp};
pub use point_mass::{point_mass_env, PointMass2D};
pub use record::{read_step_records, write_layout_records, write_step_records, StepRecord};
pub use trajectory::{
    bag_rewards, rollout, Act, BaggedTrajectory, GroundTruth, ObservedTrajectory, Obs, RewardView, Trajectory,
    Transition,
};

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// The RNG used throughout the crate.
pub type SeededRng = ChaCha8Rng;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid bag length {0}; must be at least 1")]
    BagLength(usize),
    #[error("no feasible bag layout: {0}")]
    EmptyFeasibleRegion(String),
    #[error("layout covers {layout} steps but trajectory has {trajectory}")]
    LayoutLength { layout: usize, trajectory: usize },
    #[error("bag [{start}, {end}) is outside a trajectory of length {horizon}")]
    BagOutOfBounds { start: usize, end: usize, horizon: usize },
    #[error("neighboring bags must tile [0, {horizon}) without gaps or overlaps")]
    NotTiling { horizon: usize },
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),
    #[error("action {0:?} is not valid for this environment")]
    InvalidAction(Vec<f64>),
    #[error("unknown state id {0}")]
    UnknownState(usize),
    #[error("record I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("record format: {0}")]
    Format(#[from] serde_json::Error),
}

/// Shape of the state and action spaces.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpaceKind {
    Discrete { n_states: usize, n_actions: usize },
    Continuous { state_dim: usize, action_dim: usize },
}

/// Outcome of one environment step. `reward` is the hidden per-step reward.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub next: Obs,
    pub reward: f64,
    pub done: bool,
}

/// A finite-horizon episodic environment.
pub trait Environment: Send {
    fn space(&self) -> SpaceKind;
    fn horizon(&self) -> usize;
    fn reset(&mut self, rng: &mut SeededRng) -> Obs;
    fn step(&mut self, action: &Act, rng: &mut SeededRng) -> Result<StepOutcome, EnvError>;

    fn state_dim(&self) -> usize {
        match self.space() {
            SpaceKind::Discrete { n_states, .. } => n_states,
            SpaceKind::Continuous { state_dim, .. } => state_dim,
        }
    }

    fn action_dim(&self) -> usize {
        match self.space() {
            SpaceKind::Discrete { n_actions, .. } => n_actions,
            SpaceKind::Continuous { action_dim, .. } => action_dim,
        }
    }

    fn is_discrete(&self) -> bool {
        matches!(self.space(), SpaceKind::Discrete { .. })
    }
}
