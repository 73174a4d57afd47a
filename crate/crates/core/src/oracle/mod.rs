//! Exact evaluators and brute-force searchers over tiny bagged-reward MDPs.
//!
//! Everything here computes expectations exactly, either by propagating the
//! state distribution forward or by expanding the full trajectory tree. No
//! sampling is involved.

mod objective;
mod policy;
mod theorem;
mod value_iteration;

pub use objective::{
    enumerate_trajectories, exact_bagged_objective, exact_objective, exact_path_objective, objective_report,
    ObjectiveReport, WeightedPath, TRAJECTORY_BOUND,
};
pub use policy::{enumerate_policies, optimal_policy_set, DetPolicy, PolicySet, POLICY_BOUND, TIE_TOL};
pub use theorem::{
    bag_preserving_perturbation, check_theorem1, PathRedistribution, Redistribution, TabularRedistribution, Theorem1Report, OBJECTIVE_TOL,
};
pub use value_iteration::{value_iteration, ValueSolution};

use thiserror::Error;

use crate::envlab::{BagLayout, EnvError};

/// Bag partition function: the layout for a trajectory of the given length.
pub type LayoutFn<'a> = dyn Fn(usize) -> BagLayout + 'a;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("enumeration of {count} {what} exceeds the bound {bound}")]
    EnumerationBound { what: &'static str, count: f64, bound: f64 },
    #[error("policy covers {policy_states} states x {policy_horizon} steps, MDP has {states} x {horizon}")]
    PolicyShape { policy_states: usize, policy_horizon: usize, states: usize, horizon: usize },
    #[error("reward table has {got} entries, expected {expected}")]
    RewardTable { got: usize, expected: usize },
    #[error(transparent)]
    Env(#[from] EnvError),
}
