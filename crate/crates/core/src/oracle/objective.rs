use crate::envlab::{bag_rewards, partition_fixed, TabularMdp};

use super::{DetPolicy, LayoutFn, OracleError};

/// Largest trajectory tree the enumerators will expand.
pub const TRAJECTORY_BOUND: f64 = 1e6;

/// A state-action path with its probability under some policy.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedPath {
    pub steps: Vec<(usize, usize)>,
    pub prob: f64,
}

impl WeightedPath {
    pub fn hidden_rewards(&self, mdp: &TabularMdp) -> Vec<f64> {
        self.steps.iter().map(|&(s, a)| mdp.reward(s, a)).collect()
    }
}

/// Expected undiscounted return of `policy` under a per-`(s, a)` reward table,
/// by propagating the state distribution forward. Mass entering a terminal
/// state stops accumulating reward.
pub fn exact_objective(mdp: &TabularMdp, policy: &DetPolicy, reward: &[f64]) -> Result<f64, OracleError> {
    mdp.validate()?;
    policy.check(mdp)?;
    if reward.len() != mdp.n_states * mdp.n_actions {
        return Err(OracleError::RewardTable { got: reward.len(), expected: mdp.n_states * mdp.n_actions });
    }
    let n = mdp.n_states;
    let mut dist = mdp.initial.clone();
    let mut next = vec![0.0; n];
    let mut total = 0.0;
    for t in 0..mdp.horizon {
        next.iter_mut().for_each(|v| *v = 0.0);
        for s in 0..n {
            if dist[s] == 0.0 || mdp.terminal[s] {
                continue;
            }
            let a = policy.action(s, t);
            total += dist[s] * reward[s * mdp.n_actions + a];
            for (s2, p) in mdp.successors(s, a) {
                next[s2] += dist[s] * p;
            }
        }
        std::mem::swap(&mut dist, &mut next);
    }
    Ok(total)
}

fn tree_bound(mdp: &TabularMdp, branching: f64) -> Result<(), OracleError> {
    if mdp.is_deterministic() {
        return Ok(());
    }
    let count = branching.powi(mdp.horizon as i32) * mdp.n_states as f64;
    if count > TRAJECTORY_BOUND {
        return Err(OracleError::EnumerationBound { what: "trajectories", count, bound: TRAJECTORY_BOUND });
    }
    Ok(())
}

/// Every trajectory with nonzero probability under `policy`. Paths end at a
/// terminal state or after `T` steps.
pub fn enumerate_trajectories(mdp: &TabularMdp, policy: &DetPolicy) -> Result<Vec<WeightedPath>, OracleError> {
    mdp.validate()?;
    policy.check(mdp)?;
    tree_bound(mdp, mdp.n_states as f64)?;
    let mut out = Vec::new();
    let mut path = Vec::with_capacity(mdp.horizon);
    for (s0, &p0) in mdp.initial.iter().enumerate() {
        if p0 > 0.0 {
            expand(mdp, &mut |s, t| Some(policy.action(s, t)), s0, p0, &mut path, &mut out);
        }
    }
    Ok(out)
}

/// Every path reachable under some action sequence, with the probability of
/// its state transitions (action choices contribute no probability).
pub(crate) fn enumerate_reachable_paths(mdp: &TabularMdp) -> Result<Vec<WeightedPath>, OracleError> {
    mdp.validate()?;
    tree_bound(mdp, (mdp.n_states * mdp.n_actions) as f64)?;
    if mdp.is_deterministic() {
        let count = (mdp.n_actions as f64).powi(mdp.horizon as i32);
        if count > TRAJECTORY_BOUND {
            return Err(OracleError::EnumerationBound { what: "paths", count, bound: TRAJECTORY_BOUND });
        }
    }
    let mut out = Vec::new();
    let mut path = Vec::with_capacity(mdp.horizon);
    for (s0, &p0) in mdp.initial.iter().enumerate() {
        if p0 > 0.0 {
            expand_all(mdp, s0, p0, &mut path, &mut out);
        }
    }
    Ok(out)
}

fn expand(
    mdp: &TabularMdp,
    choose: &mut dyn FnMut(usize, usize) -> Option<usize>,
    s: usize,
    prob: f64,
    path: &mut Vec<(usize, usize)>,
    out: &mut Vec<WeightedPath>,
) {
    let t = path.len();
    let Some(a) = choose(s, t) else { return };
    path.push((s, a));
    for (s2, p) in mdp.successors(s, a) {
        if mdp.terminal[s2] || t + 1 == mdp.horizon {
            out.push(WeightedPath { steps: path.clone(), prob: prob * p });
        } else {
            expand(mdp, choose, s2, prob * p, path, out);
        }
    }
    path.pop();
}

fn expand_all(mdp: &TabularMdp, s: usize, prob: f64, path: &mut Vec<(usize, usize)>, out: &mut Vec<WeightedPath>) {
    let t = path.len();
    for a in 0..mdp.n_actions {
        path.push((s, a));
        for (s2, p) in mdp.successors(s, a) {
            if mdp.terminal[s2] || t + 1 == mdp.horizon {
                out.push(WeightedPath { steps: path.clone(), prob: prob * p });
            } else {
                expand_all(mdp, s2, prob * p, path, out);
            }
        }
        path.pop();
    }
}

/// Expected sum of bagged rewards, `R(B)` being the hidden-reward sum over each
/// bag of `layout_fn(len)`, computed over the full trajectory tree.
pub fn exact_bagged_objective(mdp: &TabularMdp, policy: &DetPolicy, layout_fn: &LayoutFn) -> Result<f64, OracleError> {
    let paths = enumerate_trajectories(mdp, policy)?;
    bagged_over_paths(mdp, &paths, layout_fn)
}

pub(crate) fn bagged_over_paths(mdp: &TabularMdp, paths: &[WeightedPath], layout_fn: &LayoutFn) -> Result<f64, OracleError> {
    let mut total = 0.0;
    for path in paths {
        let hidden = path.hidden_rewards(mdp);
        let layout = layout_fn(hidden.len());
        let bags = bag_rewards(&hidden, &layout)?;
        total += path.prob * bags.iter().sum::<f64>();
    }
    Ok(total)
}

/// Expectation of a path-dependent return over the trajectory tree.
pub fn exact_path_objective(
    mdp: &TabularMdp,
    policy: &DetPolicy,
    path_return: &mut dyn FnMut(&[(usize, usize)]) -> f64,
) -> Result<f64, OracleError> {
    let paths = enumerate_trajectories(mdp, policy)?;
    Ok(paths.iter().map(|p| p.prob * path_return(&p.steps)).sum())
}

/// The three objectives of one policy: per-step return, trajectory feedback,
/// and bagged return.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveReport {
    pub j: f64,
    pub j_traj: f64,
    pub j_bagged: f64,
}

pub fn objective_report(mdp: &TabularMdp, policy: &DetPolicy, layout_fn: &LayoutFn) -> Result<ObjectiveReport, OracleError> {
    let j = exact_objective(mdp, policy, &mdp.hidden_reward)?;
    let paths = enumerate_trajectories(mdp, policy)?;
    let whole = |len: usize| partition_fixed(len, len).expect("non-empty path");
    let j_traj = bagged_over_paths(mdp, &paths, &whole)?;
    let j_bagged = bagged_over_paths(mdp, &paths, layout_fn)?;
    Ok(ObjectiveReport { j, j_traj, j_bagged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envlab::{chain_mdp, partition_fixed, SeededRng, TabularEnv};
    use crate::envlab::{rollout, Act, GroundTruth};
    use rand::SeedableRng;

    #[test]
    fn deterministic_chain_optimal_policy_scores_one() {
        let mdp = chain_mdp(2);
        let right = DetPolicy::constant(2, mdp.horizon, 1);
        assert_eq!(exact_objective(&mdp, &right, &mdp.hidden_reward).unwrap(), 1.0);
        let layout = |len: usize| partition_fixed(len, 1).unwrap();
        assert_eq!(exact_bagged_objective(&mdp, &right, &layout).unwrap(), 1.0);
    }

    #[test]
    fn zero_reward_gives_zero() {
        let mut rng = SeededRng::seed_from_u64(2);
        let mdp = TabularMdp::random(3, 2, 4, false, &mut rng).with_rewards(|_, _, _| 0.0);
        let p = DetPolicy::constant(3, 4, 1);
        assert_eq!(exact_objective(&mdp, &p, &mdp.hidden_reward).unwrap(), 0.0);
    }

    #[test]
    fn rejects_unnormalized_rows() {
        let mut mdp = chain_mdp(3);
        mdp.transition[0] = 0.3;
        let p = DetPolicy::constant(3, mdp.horizon, 1);
        assert!(exact_objective(&mdp, &p, &mdp.hidden_reward.clone()).is_err());
    }

    #[test]
    fn path_probabilities_sum_to_one() {
        let mut rng = SeededRng::seed_from_u64(3);
        let mdp = TabularMdp::random(3, 2, 4, false, &mut rng);
        let p = DetPolicy::constant(3, 4, 0);
        let paths = enumerate_trajectories(&mdp, &p).unwrap();
        assert!((paths.iter().map(|w| w.prob).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn monte_carlo_agrees_within_three_sigma() {
        let mut rng = SeededRng::seed_from_u64(17);
        let mdp = TabularMdp::random(3, 2, 4, false, &mut rng);
        let policy = DetPolicy::new(3, 4, vec![0, 1, 1, 1, 0, 0, 1, 0, 1, 0, 1, 1]);
        let exact = exact_objective(&mdp, &policy, &mdp.hidden_reward).unwrap();

        let mut env = TabularEnv::new(mdp.clone());
        let n = 1_000_000;
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..n {
            let traj = rollout(
                &mut env,
                &mut |o, t| Act::discrete(policy.action(o.id.unwrap(), t), 2),
                &mut rng,
            )
            .unwrap();
            let g = traj.hidden_return(GroundTruth::evaluator());
            sum += g;
            sum_sq += g * g;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        let se = (var / n as f64).sqrt();
        assert!((mean - exact).abs() <= 3.0 * se, "mc {mean} exact {exact} se {se}");
    }

    #[test]
    fn bagged_objective_matches_brute_force_enumeration() {
        // independent oracle: enumerate every (s0, s1, ..) sequence explicitly
        let mut rng = SeededRng::seed_from_u64(5);
        let mdp = TabularMdp::random(2, 2, 3, false, &mut rng);
        let policy = DetPolicy::new(2, 3, vec![1, 0, 0, 1, 1, 1]);
        let layout = |len: usize| partition_fixed(len, 2).unwrap();
        let got = exact_bagged_objective(&mdp, &policy, &layout).unwrap();

        let mut expect = 0.0;
        for s0 in 0..2 {
            for s1 in 0..2 {
                for s2 in 0..2 {
                    let a0 = policy.action(s0, 0);
                    let a1 = policy.action(s1, 1);
                    let a2 = policy.action(s2, 2);
                    let prob = mdp.initial[s0] * mdp.p(s0, a0, s1) * mdp.p(s1, a1, s2);
                    let r = [mdp.reward(s0, a0), mdp.reward(s1, a1), mdp.reward(s2, a2)];
                    let bagged = (r[0] + r[1]) + r[2];
                    expect += prob * bagged;
                }
            }
        }
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn report_reductions() {
        let mut rng = SeededRng::seed_from_u64(9);
        for det in [true, false] {
            let mdp = TabularMdp::random(3, 2, 4, det, &mut rng);
            let p = DetPolicy::new(3, 4, vec![1, 0, 1, 0, 0, 1, 1, 1, 0, 0, 0, 1]);
            let neighboring = |len: usize| partition_fixed(len, 3).unwrap();
            let r = objective_report(&mdp, &p, &neighboring).unwrap();
            assert!((r.j - r.j_bagged).abs() <= 1e-12);
            let whole = |len: usize| partition_fixed(len, len).unwrap();
            let w = objective_report(&mdp, &p, &whole).unwrap();
            assert!((w.j_bagged - w.j_traj).abs() <= 1e-15);
        }
    }
}
