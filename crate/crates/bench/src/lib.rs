//! Fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rlbr::envlab::{gridworld_5x5, partition_fixed, rollout, Act, BaggedTrajectory, ObservedTrajectory, SeededRng, TabularEnv};

/// `n` epsilon-random gridworld trajectories with bags of `bag_len`.
pub fn gridworld_buffer(n: usize, bag_len: usize, seed: u64) -> Vec<ObservedTrajectory> {
    let mut env = TabularEnv::new(gridworld_5x5());
    let mut rng = SeededRng::seed_from_u64(seed);
    let mut policy = SeededRng::seed_from_u64(seed + 1);
    (0..n)
        .map(|_| {
            let t = rollout(&mut env, &mut |_, _| Act::discrete(policy.random_range(0..4), 4), &mut rng).unwrap();
            let layout = partition_fixed(t.len(), bag_len).unwrap();
            BaggedTrajectory::new(t, layout).unwrap().into_observed()
        })
        .collect()
}
