use std::collections::VecDeque;

use rand::Rng;

use crate::envlab::{BaggedTrajectory, ObservedTrajectory, SeededRng, Transition};

use super::AgentError;

#[derive(Clone, Debug)]
struct Entry {
    bagged: BaggedTrajectory,
    relabeled: Vec<f64>,
}

/// Whole trajectories with their bags and a rewritable per-step reward
/// channel. Holds at most `capacity` steps; the oldest trajectories go first,
/// but the newest one is always kept.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    entries: VecDeque<Entry>,
    ends: Vec<usize>,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { capacity: capacity.max(1), entries: VecDeque::new(), ends: Vec::new(), inserted: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Stores a trajectory; its relabeled channel starts as the raw bagged stream.
    pub fn push(&mut self, bagged: BaggedTrajectory) {
        let relabeled = bagged.observed().raw_stream();
        self.entries.push_back(Entry { bagged, relabeled });
        self.inserted += 1;
        while self.entries.len() > 1 && self.n_steps_slow() > self.capacity {
            self.entries.pop_front();
        }
        self.reindex();
    }

    fn n_steps_slow(&self) -> usize {
        self.entries.iter().map(|e| e.bagged.len()).sum()
    }

    fn reindex(&mut self) {
        self.ends.clear();
        let mut total = 0;
        for e in &self.entries {
            total += e.bagged.len();
            self.ends.push(total);
        }
    }

    /// Trajectories currently held.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn n_steps(&self) -> usize {
        self.ends.last().copied().unwrap_or(0)
    }

    /// Trajectories ever inserted, including evicted ones.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn bagged(&self, i: usize) -> &BaggedTrajectory {
        &self.entries[i].bagged
    }

    pub fn observed(&self) -> Vec<&ObservedTrajectory> {
        self.entries.iter().map(|e| e.bagged.observed()).collect()
    }

    pub fn relabeled(&self, i: usize) -> &[f64] {
        &self.entries[i].relabeled
    }

    pub fn set_relabeled(&mut self, i: usize, rewards: Vec<f64>) -> Result<(), AgentError> {
        let e = &mut self.entries[i];
        if rewards.len() != e.bagged.len() {
            return Err(AgentError::RelabelLength { expected: e.bagged.len(), got: rewards.len() });
        }
        e.relabeled = rewards;
        Ok(())
    }

    /// Overwrites every trajectory's channel; `rewards` is in buffer order.
    pub fn set_all_relabeled(&mut self, rewards: Vec<Vec<f64>>) -> Result<(), AgentError> {
        if rewards.len() != self.len() {
            return Err(AgentError::RelabelLength { expected: self.len(), got: rewards.len() });
        }
        for (i, r) in rewards.into_iter().enumerate() {
            self.set_relabeled(i, r)?;
        }
        Ok(())
    }

    /// A step drawn uniformly over all stored steps: `(trajectory, t)`.
    pub fn sample_step(&self, rng: &mut SeededRng) -> Option<(usize, usize)> {
        let n = self.n_steps();
        if n == 0 {
            return None;
        }
        let k = rng.random_range(0..n);
        let i = self.ends.partition_point(|&e| e <= k);
        let start = if i == 0 { 0 } else { self.ends[i - 1] };
        Some((i, k - start))
    }

    /// Transition and relabeled reward at `(trajectory, t)`.
    pub fn step(&self, i: usize, t: usize) -> (&Transition, f64) {
        let e = &self.entries[i];
        (&e.bagged.observed().transitions[t], e.relabeled[t])
    }

    /// Mean over stored bags of `|sum of relabeled rewards in B - R(B)|`.
    pub fn reward_residual(&self) -> Option<f64> {
        let (mut total, mut count) = (0.0, 0usize);
        for e in &self.entries {
            let o = e.bagged.observed();
            for (b, r) in o.layout.bags().iter().zip(&o.bag_rewards) {
                total += (e.relabeled[b.range()].iter().sum::<f64>() - r).abs();
                count += 1;
            }
        }
        (count > 0).then(|| total / count as f64)
    }
}
