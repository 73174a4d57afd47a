use rand::Rng;

use crate::envlab::{ObservedTrajectory, SeededRng};
use crate::numcore::Tensor;

use super::{BagTarget, RbtError};

/// A training window: `M` consecutive steps of one trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub states: Tensor,
    pub actions: Tensor,
    pub next_states: Tensor,
    /// Steps with a successor state (not `done`).
    pub valid: Vec<usize>,
    /// Bags lying entirely inside the window, in local coordinates.
    pub bags: Vec<BagTarget>,
}

impl Window {
    /// Steps `start..start + len` (clipped to the trajectory).
    pub fn from_trajectory(traj: &ObservedTrajectory, start: usize, len: usize) -> Result<Self, RbtError> {
        let end = (start + len).min(traj.len());
        if start >= end {
            return Err(RbtError::EmptySteps);
        }
        let steps = &traj.transitions[start..end];
        let rows = |f: &dyn Fn(usize) -> Vec<f64>| Tensor::from_rows(&(0..steps.len()).map(f).collect::<Vec<_>>());
        let states = rows(&|i| steps[i].state.features.clone())?;
        let actions = rows(&|i| steps[i].action.features.clone())?;
        let next_states = rows(&|i| steps[i].next_state.features.clone())?;
        let valid = (0..steps.len()).filter(|&i| !steps[i].done).collect();
        let bags = traj
            .layout
            .bags()
            .iter()
            .zip(&traj.bag_rewards)
            .filter(|(b, _)| b.start >= start && b.end() <= end)
            .map(|(b, &r)| BagTarget { start: b.start - start, end: b.end() - start, reward: r })
            .collect();
        Ok(Self { states, actions, next_states, valid, bags })
    }

    pub fn len(&self) -> usize {
        self.states.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A set of windows sharing one loss normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct BagBatch {
    pub windows: Vec<Window>,
}

impl BagBatch {
    /// `batch_size` windows of `seq_len` steps, each starting at a uniformly
    /// drawn bag of a uniformly drawn trajectory.
    pub fn sample(
        trajectories: &[&ObservedTrajectory],
        batch_size: usize,
        seq_len: usize,
        rng: &mut SeededRng,
    ) -> Result<Self, RbtError> {
        let usable: Vec<&&ObservedTrajectory> = trajectories.iter().filter(|t| !t.layout.is_empty()).collect();
        if usable.is_empty() {
            return Err(RbtError::EmptyBags);
        }
        let windows = (0..batch_size)
            .map(|_| {
                let traj = usable[rng.random_range(0..usable.len())];
                let bag = traj.layout.bags()[rng.random_range(0..traj.layout.len())];
                Window::from_trajectory(traj, bag.start, seq_len)
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { windows })
    }

    /// Windows starting at every bag start of every trajectory (deterministic).
    pub fn covering(trajectories: &[&ObservedTrajectory], seq_len: usize) -> Result<Self, RbtError> {
        let mut windows = Vec::new();
        for traj in trajectories {
            let mut last: Option<(usize, usize)> = None;
            for b in traj.layout.bags() {
                if matches!(last, Some((s, e)) if b.start >= s && b.end() <= e) {
                    continue;
                }
                let w = Window::from_trajectory(traj, b.start, seq_len)?;
                last = Some((b.start, b.start + w.len()));
                windows.push(w);
            }
        }
        Ok(Self { windows })
    }

    pub fn n_bags(&self) -> usize {
        self.windows.iter().map(|w| w.bags.len()).sum()
    }

    pub fn n_valid_steps(&self) -> usize {
        self.windows.iter().map(|w| w.valid.len()).sum()
    }
}
