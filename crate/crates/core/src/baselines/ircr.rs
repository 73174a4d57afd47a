use crate::envlab::ObservedTrajectory;

/// Uniform redistribution with buffer-wide min-max normalization: each step
/// of bag `B` gets `(R(B) - R_min) / (R_max - R_min)`, or 0.5 when every bag
/// reward is equal. Steps outside all bags get 0; steps in several bags get
/// the mean of their values.
pub fn ircr_relabel(buffer: &[&ObservedTrajectory]) -> Vec<Vec<f64>> {
    let all = buffer.iter().flat_map(|t| t.bag_rewards.iter().copied());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r), hi.max(r)));
    let normalize = |r: f64| if hi > lo { (r - lo) / (hi - lo) } else { 0.5 };
    buffer
        .iter()
        .map(|traj| {
            let mut total = vec![0.0; traj.len()];
            let mut count = vec![0usize; traj.len()];
            for (b, &r) in traj.layout.bags().iter().zip(&traj.bag_rewards) {
                let v = normalize(r);
                for t in b.range() {
                    total[t] += v;
                    count[t] += 1;
                }
            }
            total.iter().zip(&count).map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 }).collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envlab::{partition_arbitrary, partition_fixed, Act, BaggedTrajectory, Obs, SeededRng, Trajectory, Transition};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn traj(hidden: Vec<f64>, layout: crate::envlab::BagLayout) -> ObservedTrajectory {
        let n = hidden.len();
        let transitions = (0..n)
            .map(|i| Transition {
                state: Obs::discrete(i % 3, 3),
                action: Act::discrete(i % 2, 2),
                next_state: Obs::discrete((i + 1) % 3, 3),
                done: false,
            })
            .collect();
        BaggedTrajectory::new(Trajectory::new(transitions, hidden), layout).unwrap().into_observed()
    }

    #[test]
    fn endpoints_map_to_zero_and_one() {
        let t = traj(vec![0.0, 0.0, 4.0, 6.0], partition_fixed(4, 2).unwrap());
        assert_eq!(ircr_relabel(&[&t]), vec![vec![0.0, 0.0, 1.0, 1.0]]);
    }

    #[test]
    fn single_bag_gets_midpoint() {
        let t = traj(vec![1.0, -3.0, 2.0], partition_fixed(3, 3).unwrap());
        assert_eq!(ircr_relabel(&[&t]), vec![vec![0.5; 3]]);
    }

    #[test]
    fn uncovered_and_overlapping_steps() {
        use crate::envlab::{BagLayout, BagSpec};
        let layout = BagLayout::arbitrary(vec![BagSpec::new(0, 2), BagSpec::new(1, 2)], 5).unwrap();
        let t = traj(vec![1.0, 0.0, 3.0, 0.0, 0.0], layout);
        // bag rewards 1 and 3 normalize to 0 and 1
        assert_eq!(ircr_relabel(&[&t]), vec![vec![0.0, 0.5, 1.0, 0.0, 0.0]]);
    }

    proptest! {
        #[test]
        fn within_bag_equal_and_in_unit_range(seed in 0u64..1000, n_traj in 1usize..5) {
            let mut rng = SeededRng::seed_from_u64(seed);
            let buffer: Vec<ObservedTrajectory> = (0..n_traj)
                .map(|_| {
                    let n = rng.random_range(1..40);
                    let hidden: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
                    let layout = partition_arbitrary(n, (1, 8), (-2, 3), &mut rng).unwrap();
                    traj(hidden, layout)
                })
                .collect();
            let refs: Vec<&ObservedTrajectory> = buffer.iter().collect();
            let out = ircr_relabel(&refs);
            let lo = buffer.iter().flat_map(|t| t.bag_rewards.iter().copied()).fold(f64::INFINITY, f64::min);
            let hi = buffer.iter().flat_map(|t| t.bag_rewards.iter().copied()).fold(f64::NEG_INFINITY, f64::max);
            for (t, r) in buffer.iter().zip(&out) {
                prop_assert_eq!(r.len(), t.len());
                prop_assert!(r.iter().all(|v| (0.0..=1.0).contains(v)));
                let cover = t.layout.coverage();
                for (b, &big_r) in t.layout.bags().iter().zip(&t.bag_rewards) {
                    let expect = if hi > lo { (big_r - lo) / (hi - lo) } else { 0.5 };
                    for i in b.range().filter(|&i| cover[i] == 1) {
                        prop_assert_eq!(r[i], expect);
                    }
                }
            }
        }
    }
}
