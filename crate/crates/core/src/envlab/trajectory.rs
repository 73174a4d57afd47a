use serde::{Deserialize, Serialize};

use super::mdp::one_hot;
use super::{BagLayout, EnvError, Environment, SeededRng};

/// An observation: optional discrete id plus a feature vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Obs {
    pub id: Option<usize>,
    pub features: Vec<f64>,
}

impl Obs {
    pub fn discrete(id: usize, n: usize) -> Self {
        Self { id: Some(id), features: one_hot(id, n) }
    }

    pub fn continuous(features: Vec<f64>) -> Self {
        Self { id: None, features }
    }
}

/// An action: optional discrete id plus a feature vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Act {
    pub id: Option<usize>,
    pub features: Vec<f64>,
}

impl Act {
    pub fn discrete(id: usize, n: usize) -> Self {
        Self { id: Some(id), features: one_hot(id, n) }
    }

    pub fn continuous(features: Vec<f64>) -> Self {
        Self { id: None, features }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Obs,
    pub action: Act,
    pub next_state: Obs,
    pub done: bool,
}

/// A raw rollout: transitions plus the hidden per-step rewards.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
    hidden: Vec<f64>,
}

impl Trajectory {
    pub fn new(transitions: Vec<Transition>, hidden: Vec<f64>) -> Self {
        assert_eq!(transitions.len(), hidden.len());
        Self { transitions, hidden }
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn hidden_rewards(&self, _: GroundTruth) -> &[f64] {
        &self.hidden
    }

    pub fn hidden_return(&self, _: GroundTruth) -> f64 {
        self.hidden.iter().sum()
    }
}

/// Capability required to read hidden rewards. Learners never receive one;
/// evaluators, oracles, and tests construct it explicitly.
#[derive(Clone, Copy, Debug)]
pub struct GroundTruth(());

impl GroundTruth {
    pub fn evaluator() -> Self {
        GroundTruth(())
    }
}

/// Which per-step reward stream [`BaggedTrajectory::learner_view`] returns.
#[derive(Clone, Copy, Debug)]
pub enum RewardView {
    /// `R(B)` at each bag's final step, zero elsewhere.
    Raw,
    /// The hidden per-step rewards.
    Hidden(GroundTruth),
}

/// Sum of hidden rewards over each bag's interval.
pub fn bag_rewards(hidden: &[f64], layout: &BagLayout) -> Result<Vec<f64>, EnvError> {
    if layout.horizon() != hidden.len() {
        return Err(EnvError::LayoutLength { layout: layout.horizon(), trajectory: hidden.len() });
    }
    Ok(layout.bags().iter().map(|b| hidden[b.range()].iter().sum()).collect())
}

/// A trajectory annotated with bags and bagged rewards; keeps the hidden
/// channel private.
#[derive(Clone, Debug)]
pub struct BaggedTrajectory {
    observed: ObservedTrajectory,
    hidden: Vec<f64>,
}

impl BaggedTrajectory {
    pub fn new(trajectory: Trajectory, layout: BagLayout) -> Result<Self, EnvError> {
        let rewards = bag_rewards(&trajectory.hidden, &layout)?;
        Ok(Self {
            observed: ObservedTrajectory { transitions: trajectory.transitions, layout, bag_rewards: rewards },
            hidden: trajectory.hidden,
        })
    }

    /// The learner-visible part.
    pub fn observed(&self) -> &ObservedTrajectory {
        &self.observed
    }

    pub fn into_observed(self) -> ObservedTrajectory {
        self.observed
    }

    pub fn layout(&self) -> &BagLayout {
        &self.observed.layout
    }

    pub fn bag_rewards(&self) -> &[f64] {
        &self.observed.bag_rewards
    }

    pub fn len(&self) -> usize {
        self.hidden.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hidden.is_empty()
    }

    pub fn hidden_rewards(&self, _: GroundTruth) -> &[f64] {
        &self.hidden
    }

    pub fn learner_view(&self, view: RewardView) -> Vec<f64> {
        match view {
            RewardView::Raw => self.observed.raw_stream(),
            RewardView::Hidden(_) => self.hidden.clone(),
        }
    }
}

/// What a learner may see: transitions, bags, and bagged rewards.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservedTrajectory {
    pub transitions: Vec<Transition>,
    pub layout: BagLayout,
    pub bag_rewards: Vec<f64>,
}

impl ObservedTrajectory {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// `R(B)` placed at each bag's last step. Bags sharing a last step add up.
    pub fn raw_stream(&self) -> Vec<f64> {
        let mut stream = vec![0.0; self.len()];
        for (b, r) in self.layout.bags().iter().zip(&self.bag_rewards) {
            stream[b.end() - 1] += r;
        }
        stream
    }

    /// `R(B)/n` spread over each bag; steps outside every bag get 0, and steps
    /// covered more than once get the mean of their bags' values.
    pub fn uniform_bag_view(&self) -> Vec<f64> {
        let mut total = vec![0.0; self.len()];
        let mut count = vec![0usize; self.len()];
        for (b, r) in self.layout.bags().iter().zip(&self.bag_rewards) {
            for t in b.range() {
                total[t] += r / b.len as f64;
                count[t] += 1;
            }
        }
        total.iter().zip(&count).map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 }).collect()
    }

    pub fn state_matrix(&self) -> Vec<Vec<f64>> {
        self.transitions.iter().map(|t| t.state.features.clone()).collect()
    }
}

/// Runs one episode until `done` or the horizon.
pub fn rollout(
    env: &mut dyn Environment,
    policy: &mut dyn FnMut(&Obs, usize) -> super::Act,
    rng: &mut SeededRng,
) -> Result<Trajectory, EnvError> {
    let mut obs = env.reset(rng);
    let mut transitions = Vec::new();
    let mut hidden = Vec::new();
    for t in 0..env.horizon() {
        let action = policy(&obs, t);
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
