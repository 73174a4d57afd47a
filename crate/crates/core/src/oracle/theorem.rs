use crate::envlab::{bag_rewards, BagLayout, TabularMdp};

use super::objective::{bagged_over_paths, enumerate_reachable_paths, enumerate_trajectories};
use super::{enumerate_policies, exact_objective, DetPolicy, LayoutFn, OracleError, PolicySet};

/// Tolerance for objective equality and for the bag-sum condition.
pub const OBJECTIVE_TOL: f64 = 1e-9;

/// A per-step reward assignment `r_hat` along a state-action path.
pub trait Redistribution {
    fn rewards(&self, path: &[(usize, usize)], layout: &BagLayout) -> Vec<f64>;

    /// The `(s, a)` table when `r_hat` is Markovian.
    fn as_table(&self) -> Option<&[f64]> {
        None
    }
}

/// Markovian redistribution given as a `[s * A + a]` table.
#[derive(Clone, Debug)]
pub struct TabularRedistribution {
    pub n_actions: usize,
    pub table: Vec<f64>,
}

impl TabularRedistribution {
    pub fn new(mdp: &TabularMdp, table: Vec<f64>) -> Self {
        Self { n_actions: mdp.n_actions, table }
    }

    pub fn hidden(mdp: &TabularMdp) -> Self {
        Self::new(mdp, mdp.hidden_reward.clone())
    }
}

impl Redistribution for TabularRedistribution {
    fn rewards(&self, path: &[(usize, usize)], _: &BagLayout) -> Vec<f64> {
        path.iter().map(|&(s, a)| self.table[s * self.n_actions + a]).collect()
    }

    fn as_table(&self) -> Option<&[f64]> {
        Some(&self.table)
    }
}

/// Path-dependent redistribution built from a closure.
pub struct PathRedistribution<F>(pub F);

impl<F> Redistribution for PathRedistribution<F>
where
    F: Fn(&[(usize, usize)], &BagLayout) -> Vec<f64>,
{
    fn rewards(&self, path: &[(usize, usize)], layout: &BagLayout) -> Vec<f64> {
        (self.0)(path, layout)
    }
}

/// Hidden rewards plus `+eps, -eps, +eps, ...` inside every bag, the last step
/// of each bag absorbing the negated sum so bag totals are unchanged.
pub fn bag_preserving_perturbation(
    mdp: &TabularMdp,
    eps: f64,
) -> PathRedistribution<impl Fn(&[(usize, usize)], &BagLayout) -> Vec<f64> + '_> {
    PathRedistribution(move |path: &[(usize, usize)], layout: &BagLayout| {
        let mut r: Vec<f64> = path.iter().map(|&(s, a)| mdp.reward(s, a)).collect();
        for bag in layout.bags() {
            let mut shift = 0.0;
            for (k, t) in bag.range().enumerate() {
                if t + 1 == bag.end() {
                    r[t] -= shift;
                } else {
                    let d = if k % 2 == 0 { eps } else { -eps };
                    r[t] += d;
                    shift += d;
                }
            }
        }
        r
    })
}

#[derive(Clone, Debug)]
pub struct Theorem1Report {
    pub n_paths: usize,
    pub n_policies: usize,
    /// Largest `|sum_{t in B} r_hat_t - R(B)|` over reachable paths and bags.
    pub condition_violation: f64,
    /// Whether every layout met along the way tiles its path.
    pub layouts_tile: bool,
    /// Largest `|J_B(pi) - J_rhat(pi)|` over all deterministic policies.
    pub max_gap: f64,
    pub worst_policy: Option<DetPolicy>,
    pub bagged_optimal: PolicySet,
    pub redistributed_optimal: PolicySet,
    /// Optimal-set equality; `None` when `r_hat` is path-dependent.
    pub sets_equal: Option<bool>,
}

impl Theorem1Report {
    pub fn condition_holds(&self) -> bool {
        self.layouts_tile && self.condition_violation <= OBJECTIVE_TOL
    }

    pub fn objectives_equal(&self) -> bool {
        self.max_gap <= OBJECTIVE_TOL
    }

    pub fn passed(&self) -> bool {
        self.condition_holds() && self.objectives_equal() && self.sets_equal != Some(false)
    }
}

/// Checks the bag-sum condition on every reachable path, then compares
/// `J_B(pi)` with `J_rhat(pi)` for every deterministic policy and compares
/// the two optimal-policy sets.
pub fn check_theorem1(
    mdp: &TabularMdp,
    layout_fn: &LayoutFn,
    rhat: &dyn Redistribution,
) -> Result<Theorem1Report, OracleError> {
    let reachable = enumerate_reachable_paths(mdp)?;
    let mut condition_violation: f64 = 0.0;
    let mut layouts_tile = true;
    for wp in &reachable {
        let hidden = wp.hidden_rewards(mdp);
        let layout = layout_fn(hidden.len());
        layouts_tile &= layout.tiles();
        let bags = bag_rewards(&hidden, &layout)?;
        let r = rhat.rewards(&wp.steps, &layout);
        for (b, big_r) in layout.bags().iter().zip(&bags) {
            let sum: f64 = r[b.range()].iter().sum();
            condition_violation = condition_violation.max((sum - big_r).abs());
        }
    }

    let policies = enumerate_policies(mdp)?;
    let mut j_bagged = Vec::with_capacity(policies.len());
    let mut j_rhat = Vec::with_capacity(policies.len());
    for p in &policies {
        let paths = enumerate_trajectories(mdp, p)?;
        j_bagged.push(bagged_over_paths(mdp, &paths, layout_fn)?);
        j_rhat.push(match rhat.as_table() {
            Some(table) => exact_objective(mdp, p, table)?,
            None => paths
                .iter()
                .map(|wp| {
                    let layout = layout_fn(wp.steps.len());
                    wp.prob * rhat.rewards(&wp.steps, &layout).iter().sum::<f64>()
                })
                .sum(),
        });
    }

    let (mut max_gap, mut worst) = (0.0, None);
    for (i, (a, b)) in j_bagged.iter().zip(&j_rhat).enumerate() {
        let gap = (a - b).abs();
        if worst.is_none() || gap > max_gap {
            max_gap = gap;
            worst = Some(i);
        }
    }
    let bagged_optimal = PolicySet::from_values(&policies, &j_bagged);
    let redistributed_optimal = PolicySet::from_values(&policies, &j_rhat);
    let sets_equal = rhat.as_table().map(|_| bagged_optimal.policies == redistributed_optimal.policies);
    Ok(Theorem1Report {
        n_paths: reachable.len(),
        n_policies: policies.len(),
        condition_violation,
        layouts_tile,
        max_gap,
        worst_policy: worst.map(|i| policies[i].clone()),
        bagged_optimal,
        redistributed_optimal,
        sets_equal,
    })
}
