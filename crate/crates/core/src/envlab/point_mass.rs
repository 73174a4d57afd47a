use rand::Rng;

use super::{Act, EnvError, Environment, Obs, SeededRng, SpaceKind, StepOutcome};

const DT: f64 = 0.1;

/// A point mass on `[-1, 1]^2` driven by a clipped 2-D acceleration.
///
/// State is `(px, py, vx, vy)`, all clipped to `[-1, 1]`. The hidden reward
/// is `-|pos - goal| - 0.01 |a|^2`.
#[derive(Clone, Debug)]
pub struct PointMass2D {
    pub horizon: usize,
    pub goal: [f64; 2],
    state: [f64; 4],
}

impl PointMass2D {
    pub fn new(horizon: usize) -> Self {
        Self { horizon, goal: [0.5, 0.5], state: [0.0; 4] }
    }

    pub fn state(&self) -> [f64; 4] {
        self.state
    }
}

pub fn point_mass_env(horizon: usize) -> PointMass2D {
    PointMass2D::new(horizon)
}

impl Default for PointMass2D {
    fn default() -> Self {
        Self::new(200)
    }
}

impl Environment for PointMass2D {
    fn space(&self) -> SpaceKind {
        SpaceKind::Continuous { state_dim: 4, action_dim: 2 }
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn reset(&mut self, rng: &mut SeededRng) -> Obs {
        self.state = [-0.5 + rng.random_range(-0.1..0.1), -0.5 + rng.random_range(-0.1..0.1), 0.0, 0.0];
        Obs::continuous(self.state.to_vec())
    }

    fn step(&mut self, action: &Act, _rng: &mut SeededRng) -> Result<StepOutcome, EnvError> {
        if action.features.len() != 2 || action.features.iter().any(|x| !x.is_finite()) {
            return Err(EnvError::InvalidAction(action.features.clone()));
        }
        let a = [action.features[0].clamp(-1.0, 1.0), action.features[1].clamp(-1.0, 1.0)];
        let [px, py, vx, vy] = self.state;
        let dist = ((px - self.goal[0]).powi(2) + (py - self.goal[1]).powi(2)).sqrt();
        let reward = -dist - 0.01 * (a[0] * a[0] + a[1] * a[1]);
        let vx = (vx + DT * a[0]).clamp(-1.0, 1.0);
        let vy = (vy + DT * a[1]).clamp(-1.0, 1.0);
        let px = (px + DT * vx).clamp(-1.0, 1.0);
        let py = (py + DT * vy).clamp(-1.0, 1.0);
        self.state = [px, py, vx, vy];
        Ok(StepOutcome { next: Obs::continuous(self.state.to_vec()), reward, done: false })
    }
}
