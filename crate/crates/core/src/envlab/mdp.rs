use rand::Rng;

use super::{Act, EnvError, Environment, Obs, SeededRng, SpaceKind, StepOutcome};

/// Finite MDP `(S, A, P, r, mu)` with horizon `T`.
///
/// Entering a terminal state ends the episode; terminal states collect no
/// further reward. `hidden_reward` is the latent per-step reward.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// `P(s' | s, a)` at `[(s * n_actions + a) * n_states + s']`.
    pub transition: Vec<f64>,
    /// `r(s, a)` at `[s * n_actions + a]`.
    pub hidden_reward: Vec<f64>,
    pub horizon: usize,
    pub initial: Vec<f64>,
    pub terminal: Vec<bool>,
}

const ROW_TOL: f64 = 1e-12;

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        hidden_reward: Vec<f64>,
        horizon: usize,
        initial: Vec<f64>,
        terminal: Vec<bool>,
    ) -> Result<Self, EnvError> {
        let mdp = Self { n_states, n_actions, transition, hidden_reward, horizon, initial, terminal };
        mdp.validate()?;
        Ok(mdp)
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let (s, a) = (self.n_states, self.n_actions);
        let bad = |m: String| Err(EnvError::InvalidMdp(m));
        if s == 0 || a == 0 {
            return bad("empty state or action set".into());
        }
        if self.horizon < 1 {
            return bad("horizon must be at least 1".into());
        }
        if self.transition.len() != s * a * s || self.hidden_reward.len() != s * a {
            return bad("table sizes do not match |S| and |A|".into());
        }
        if self.initial.len() != s || self.terminal.len() != s {
            return bad("initial distribution or terminal mask has wrong length".into());
        }
        if self.transition.iter().chain(&self.initial).any(|&p| !(0.0..=1.0).contains(&p)) {
            return bad("probabilities must lie in [0, 1]".into());
        }
        if self.hidden_reward.iter().any(|r| !r.is_finite()) {
            return bad("rewards must be finite".into());
        }
        for row in self.transition.chunks(s) {
            if (row.iter().sum::<f64>() - 1.0).abs() > ROW_TOL {
                return bad("transition row does not sum to 1".into());
            }
        }
        if (self.initial.iter().sum::<f64>() - 1.0).abs() > ROW_TOL {
            return bad("initial distribution does not sum to 1".into());
        }
        if self.initial.iter().zip(&self.terminal).any(|(&p, &t)| t && p > 0.0) {
            return bad("episodes cannot start in a terminal state".into());
        }
        Ok(())
    }

    pub fn p(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition[(s * self.n_actions + a) * self.n_states + next]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.hidden_reward[s * self.n_actions + a]
    }

    /// Successor states with nonzero probability.
    pub fn successors(&self, s: usize, a: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let base = (s * self.n_actions + a) * self.n_states;
        self.transition[base..base + self.n_states].iter().copied().enumerate().filter(|&(_, p)| p > 0.0)
    }

    pub fn is_deterministic(&self) -> bool {
        self.transition.iter().all(|&p| p == 0.0 || p == 1.0) && self.initial.iter().all(|&p| p == 0.0 || p == 1.0)
    }

    /// A copy with every hidden reward replaced by `f(s, a, r)`.
    pub fn with_rewards(&self, f: impl Fn(usize, usize, f64) -> f64) -> Self {
        let mut out = self.clone();
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                out.hidden_reward[s * self.n_actions + a] = f(s, a, self.reward(s, a));
            }
        }
        out
    }

    /// Random instance without terminal states. Rewards are uniform in `[-1, 1]`.
    pub fn random<R: Rng + ?Sized>(
        n_states: usize,
        n_actions: usize,
        horizon: usize,
        deterministic: bool,
        rng: &mut R,
    ) -> Self {
        let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
        for _ in 0..n_states * n_actions {
            transition.extend(random_distribution(n_states, deterministic, rng));
        }
        let hidden_reward = (0..n_states * n_actions).map(|_| rng.random_range(-1.0..1.0)).collect();
        let initial = random_distribution(n_states, deterministic, rng);
        Self::new(n_states, n_actions, transition, hidden_reward, horizon, initial, vec![false; n_states])
            .expect("random MDP is valid by construction")
    }

    pub fn sample_initial(&self, rng: &mut SeededRng) -> usize {
        sample_index(&self.initial, rng)
    }

    pub fn sample_next(&self, s: usize, a: usize, rng: &mut SeededRng) -> usize {
        let base = (s * self.n_actions + a) * self.n_states;
        sample_index(&self.transition[base..base + self.n_states], rng)
    }
}

fn random_distribution<R: Rng + ?Sized>(n: usize, deterministic: bool, rng: &mut R) -> Vec<f64> {
    let mut p = vec![0.0; n];
    if deterministic {
        p[rng.random_range(0..n)] = 1.0;
        return p;
    }
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    for (o, r) in p.iter_mut().zip(&raw) {
        *o = r / total;
    }
    // push the rounding residue into the largest entry so the row sums to 1 exactly enough
    let resid = 1.0 - p.iter().sum::<f64>();
    let imax = (0..n).max_by(|&i, &j| p[i].total_cmp(&p[j])).unwrap();
    p[imax] += resid;
    p
}

fn sample_index(probs: &[f64], rng: &mut SeededRng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

pub(crate) fn one_hot(i: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

/// Square gridworld: start in the top-left corner, terminal goal in the
/// bottom-right. Moves are up/down/left/right; walls keep the agent in place.
/// Entering the goal pays 1.0, every other step costs 0.01.
pub fn gridworld(size: usize, horizon: usize) -> TabularMdp {
    let n = size * size;
    let goal = n - 1;
    let mut transition = vec![0.0; n * 4 * n];
    let mut reward = vec![0.0; n * 4];
    for s in 0..n {
        let (r, c) = (s / size, s % size);
        for a in 0..4 {
            let next = if s == goal {
                s
            } else {
                match a {
                    0 if r > 0 => s - size,
                    1 if r + 1 < size => s + size,
                    2 if c > 0 => s - 1,
                    3 if c + 1 < size => s + 1,
                    _ => s,
                }
            };
            transition[(s * 4 + a) * n + next] = 1.0;
            reward[s * 4 + a] = match (s == goal, next == goal) {
                (true, _) => 0.0,
                (false, true) => 1.0,
                (false, false) => -0.01,
            };
        }
    }
    let mut terminal = vec![false; n];
    terminal[goal] = true;
    TabularMdp::new(n, 4, transition, reward, horizon, one_hot(0, n), terminal).expect("gridworld is valid")
}

/// The 5x5 gridworld with horizon 200.
pub fn gridworld_5x5() -> TabularMdp {
    gridworld(5, 200)
}

/// Chain of `n` states; action 0 moves left (clamped at 0), action 1 moves right.
/// Reaching the last state pays 1.0 and ends the episode. Horizon is `2n`.
pub fn chain_mdp(n: usize) -> TabularMdp {
    assert!(n >= 2, "chain needs at least two states");
    let mut transition = vec![0.0; n * 2 * n];
    let mut reward = vec![0.0; n * 2];
    for s in 0..n {
        for a in 0..2 {
            let next = if s == n - 1 {
                s
            } else if a == 0 {
                s.saturating_sub(1)
            } else {
                s + 1
            };
            transition[(s * 2 + a) * n + next] = 1.0;
            if s != n - 1 && next == n - 1 {
                reward[s * 2 + a] = 1.0;
            }
        }
    }
    let mut terminal = vec![false; n];
    terminal[n - 1] = true;
    TabularMdp::new(n, 2, transition, reward, 2 * n, one_hot(0, n), terminal).expect("chain is valid")
}

/// Episodic simulator over a [`TabularMdp`] with one-hot observations.
#[derive(Clone, Debug)]
pub struct TabularEnv {
    mdp: TabularMdp,
    state: usize,
}

impl TabularEnv {
    pub fn new(mdp: TabularMdp) -> Self {
        Self { mdp, state: 0 }
    }

    pub fn mdp(&self) -> &TabularMdp {
        &self.mdp
    }

    pub fn obs(&self, s: usize) -> Obs {
        Obs::discrete(s, self.mdp.n_states)
    }

    pub fn action(&self, a: usize) -> Act {
        Act::discrete(a, self.mdp.n_actions)
    }
}

impl Environment for TabularEnv {
    fn space(&self) -> SpaceKind {
        SpaceKind::Discrete { n_states: self.mdp.n_states, n_actions: self.mdp.n_actions }
    }

    fn horizon(&self) -> usize {
        self.mdp.horizon
    }

    fn reset(&mut self, rng: &mut SeededRng) -> Obs {
        self.state = self.mdp.sample_initial(rng);
        self.obs(self.state)
    }

    fn step(&mut self, action: &Act, rng: &mut SeededRng) -> Result<StepOutcome, EnvError> {
        let a = match action.id {
            Some(a) if a < self.mdp.n_actions => a,
            _ => return Err(EnvError::InvalidAction(action.features.clone())),
        };
        let s = self.state;
        let reward = self.mdp.reward(s, a);
        let next = self.mdp.sample_next(s, a, rng);
        self.state = next;
        Ok(StepOutcome { next: self.obs(next), reward, done: self.mdp.terminal[next] })
    }
}
