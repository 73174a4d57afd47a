use crate::envlab::TabularMdp;

use super::{DetPolicy, OracleError, TIE_TOL};

/// Finite-horizon optimal values from backward induction.
#[derive(Clone, Debug)]
pub struct ValueSolution {
    n_states: usize,
    n_actions: usize,
    horizon: usize,
    initial: Vec<f64>,
    /// `v[t * S + s]`, `t` in `0..=T`; row `T` is zero.
    v: Vec<f64>,
    /// `q[(t * S + s) * A + a]`, `t < T`.
    q: Vec<f64>,
}

impl ValueSolution {
    pub fn value(&self, t: usize, s: usize) -> f64 {
        self.v[t * self.n_states + s]
    }

    pub fn q(&self, t: usize, s: usize, a: usize) -> f64 {
        self.q[(t * self.n_states + s) * self.n_actions + a]
    }

    /// `sum_s mu(s) V_0(s)`.
    pub fn root_value(&self) -> f64 {
        self.initial.iter().enumerate().map(|(s, &p)| p * self.value(0, s)).sum()
    }

    /// Actions within [`TIE_TOL`] of the best Q-value at `(t, s)`.
    pub fn greedy_actions(&self, t: usize, s: usize) -> Vec<usize> {
        let best = self.value(t, s);
        (0..self.n_actions).filter(|&a| self.q(t, s, a) >= best - TIE_TOL).collect()
    }

    /// Greedy policy breaking ties toward the lowest action index.
    pub fn greedy_policy(&self) -> DetPolicy {
        let mut table = Vec::with_capacity(self.horizon * self.n_states);
        for t in 0..self.horizon {
            for s in 0..self.n_states {
                table.push(self.greedy_actions(t, s)[0]);
            }
        }
        DetPolicy::new(self.n_states, self.horizon, table)
    }
}

/// Backward induction over `mdp` with an arbitrary per-`(s, a)` reward table.
/// Terminal states carry zero value.
pub fn value_iteration(mdp: &TabularMdp, reward: &[f64]) -> Result<ValueSolution, OracleError> {
    mdp.validate()?;
    let (n, na, h) = (mdp.n_states, mdp.n_actions, mdp.horizon);
    if reward.len() != n * na {
        return Err(OracleError::RewardTable { got: reward.len(), expected: n * na });
    }
    let mut v = vec![0.0; (h + 1) * n];
    let mut q = vec![0.0; h * n * na];
    for t in (0..h).rev() {
        for s in 0..n {
            if mdp.terminal[s] {
                continue;
            }
            let mut best = f64::NEG_INFINITY;
            for a in 0..na {
                let cont: f64 = mdp.successors(s, a).map(|(s2, p)| p * v[(t + 1) * n + s2]).sum();
                let value = reward[s * na + a] + cont;
                q[(t * n + s) * na + a] = value;
                best = best.max(value);
            }
            v[t * n + s] = best;
        }
    }
    Ok(ValueSolution { n_states: n, n_actions: na, horizon: h, initial: mdp.initial.clone(), v, q })
}
