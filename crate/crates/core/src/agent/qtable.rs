use serde::{Deserialize, Serialize};

use super::AgentError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QConfig {
    pub lr: f64,
    pub gamma: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Fraction of the run over which epsilon decays linearly.
    pub eps_fraction: f64,
    /// Transitions replayed per policy update.
    pub batch: usize,
}

impl Default for QConfig {
    fn default() -> Self {
        Self { lr: 0.1, gamma: 0.99, eps_start: 1.0, eps_end: 0.05, eps_fraction: 0.2, batch: 1 }
    }
}

impl QConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let ok = (0.0..=1.0).contains(&self.lr)
            && (0.0..=1.0).contains(&self.gamma)
            && (0.0..=1.0).contains(&self.eps_start)
            && (0.0..=1.0).contains(&self.eps_end)
            && self.eps_fraction >= 0.0
            && self.batch > 0;
        if ok {
            Ok(())
        } else {
            Err(AgentError::Config(format!("invalid Q-learning settings {self:?}")))
        }
    }

    /// Exploration rate after `step` of `total` environment steps.
    pub fn epsilon(&self, step: usize, total: usize) -> f64 {
        let span = self.eps_fraction * total as f64;
        if span <= 0.0 || step as f64 >= span {
            return self.eps_end;
        }
        self.eps_start + (self.eps_end - self.eps_start) * step as f64 / span
    }
}

/// Tabular action values.
#[derive(Clone, Debug, PartialEq)]
pub struct QTable {
    pub n_states: usize,
    pub n_actions: usize,
    pub lr: f64,
    pub gamma: f64,
    values: Vec<f64>,
}

impl QTable {
    pub fn new(n_states: usize, n_actions: usize, lr: f64, gamma: f64) -> Self {
        Self { n_states, n_actions, lr, gamma, values: vec![0.0; n_states * n_actions] }
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    /// Highest-valued action; ties go to the lowest index.
    pub fn greedy(&self, s: usize) -> usize {
        let row = self.row(s);
        let mut best = 0;
        for (a, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = a;
            }
        }
        best
    }

    /// `Q(s,a) += lr * (r + gamma * max_a' Q(s',a') - Q(s,a))`, without the
    /// bootstrap term when `terminal`. Returns the TD error.
    pub fn q_update(&mut self, s: usize, a: usize, r: f64, next: usize, terminal: bool) -> Result<f64, AgentError> {
        for id in [s, next] {
            if id >= self.n_states {
                return Err(AgentError::UnknownState(id));
            }
        }
        if a >= self.n_actions {
            return Err(AgentError::UnknownAction(a));
        }
        let boot = if terminal { 0.0 } else { self.row(next).iter().copied().fold(f64::NEG_INFINITY, f64::max) };
        let q = &mut self.values[s * self.n_actions + a];
        let td = r + self.gamma * boot - *q;
        *q += self.lr * td;
        if !q.is_finite() {
            return Err(AgentError::NonFinite("Q-table entry"));
        }
        Ok(td)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envlab::{gridworld_5x5, Environment, SeededRng, TabularEnv};
    use crate::oracle::value_iteration;
    use rand::{Rng, SeedableRng};

    #[test]
    fn zero_lr_changes_nothing() {
        let mut q = QTable::new(3, 2, 0.0, 0.9);
        q.q_update(0, 1, 5.0, 2, false).unwrap();
        assert!(q.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_gamma_converges_to_immediate_reward() {
        let mut q = QTable::new(2, 2, 0.5, 0.0);
        q.q_update(1, 0, 3.0, 0, false).unwrap();
        for _ in 0..60 {
            q.q_update(0, 1, -2.0, 1, false).unwrap();
        }
        assert!((q.get(0, 1) + 2.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_unknown_ids() {
        let mut q = QTable::new(2, 2, 0.1, 0.9);
        assert!(matches!(q.q_update(2, 0, 0.0, 0, false), Err(AgentError::UnknownState(2))));
        assert!(matches!(q.q_update(0, 0, 0.0, 5, false), Err(AgentError::UnknownState(5))));
        assert!(matches!(q.q_update(0, 2, 0.0, 0, false), Err(AgentError::UnknownAction(2))));
    }

    #[test]
    fn ties_pick_lowest_index() {
        let mut q = QTable::new(1, 3, 1.0, 0.0);
        q.q_update(0, 1, 1.0, 0, true).unwrap();
        q.q_update(0, 2, 1.0, 0, true).unwrap();
        assert_eq!(q.greedy(0), 1);
    }

    #[test]
    fn epsilon_schedule() {
        let c = QConfig::default();
        assert_eq!(c.epsilon(0, 1000), 1.0);
        assert!((c.epsilon(100, 1000) - 0.525).abs() < 1e-12);
        assert_eq!(c.epsilon(200, 1000), 0.05);
        assert_eq!(c.epsilon(999, 1000), 0.05);
    }

    #[test]
    fn gridworld_greedy_matches_value_iteration() {
        let mdp = gridworld_5x5();
        let vi = value_iteration(&mdp, &mdp.hidden_reward).unwrap();
        let mut env = TabularEnv::new(mdp.clone());
        let mut rng = SeededRng::seed_from_u64(5);
        let cfg = QConfig::default();
        let mut q = QTable::new(25, 4, cfg.lr, cfg.gamma);
        let total = 200_000;
        let mut obs = env.reset(&mut rng);
        let mut t = 0;
        for step in 0..total {
            let s = obs.id.unwrap();
            let a = if rng.random::<f64>() < cfg.epsilon(step, total) { rng.random_range(0..4) } else { q.greedy(s) };
            let out = env.step(&env.action(a), &mut rng).unwrap();
            q.q_update(s, a, out.reward, out.next.id.unwrap(), out.done).unwrap();
            t += 1;
            obs = if out.done || t == env.horizon() {
                t = 0;
                env.reset(&mut rng)
            } else {
                out.next
            };
        }
        for s in 0..24 {
            assert!(vi.greedy_actions(0, s).contains(&q.greedy(s)), "state {s}");
        }
    }
}
