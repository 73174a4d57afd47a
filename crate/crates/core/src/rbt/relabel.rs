use crate::envlab::ObservedTrajectory;
use crate::numcore::{Tape, Tensor};

use super::{RbtError, RbtModel, RbtParams};

/// Per-step rewards for `traj`, computed over consecutive chunks of
/// `relabel_len` steps with dropout off. Each chunk is an independent
/// sequence starting at position 0.
pub fn relabel(params: &RbtParams, traj: &ObservedTrajectory) -> Result<Vec<f64>, RbtError> {
    let chunk = params.config.relabel_len;
    let mut out = Vec::with_capacity(traj.len());
    let mut tape = Tape::new();
    let model = RbtModel::bind_frozen(&mut tape, params);
    for start in (0..traj.len()).step_by(chunk) {
        let steps = &traj.transitions[start..(start + chunk).min(traj.len())];
        let states = Tensor::from_rows(&steps.iter().map(|t| t.state.features.clone()).collect::<Vec<_>>())?;
        let actions = Tensor::from_rows(&steps.iter().map(|t| t.action.features.clone()).collect::<Vec<_>>())?;
        let f = model.forward(&mut tape, &states, &actions, 0, None)?;
        out.extend_from_slice(tape.value(f.rewards).data());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envlab::{partition_fixed, Act, BaggedTrajectory, Obs, SeededRng, Trajectory, Transition};
    use crate::rbt::RbtConfig;
    use rand::{Rng, SeedableRng};

    fn long_traj(n: usize, seed: u64) -> ObservedTrajectory {
        let mut rng = SeededRng::seed_from_u64(seed);
        let transitions = (0..n)
            .map(|i| Transition {
                state: Obs::continuous(vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]),
                action: Act::discrete(i % 3, 3),
                next_state: Obs::continuous(vec![0.0, 0.0]),
                done: false,
            })
            .collect();
        BaggedTrajectory::new(Trajectory::new(transitions, vec![0.0; n]), partition_fixed(n, 50).unwrap())
            .unwrap()
            .into_observed()
    }

    fn cfg(relabel_len: usize) -> RbtConfig {
        RbtConfig { embed_dim: 8, n_heads: 2, n_causal_layers: 1, seq_len: 20, relabel_len, ..RbtConfig::default() }
    }

    #[test]
    fn short_trajectory_is_one_chunk() {
        let p = RbtParams::new(&cfg(30), 2, 3, &mut SeededRng::seed_from_u64(1)).unwrap();
        let t = long_traj(25, 2);
        let r = relabel(&p, &t).unwrap();
        let mut tape = Tape::new();
        let model = RbtModel::bind_frozen(&mut tape, &p);
        let states = Tensor::from_rows(&t.state_matrix()).unwrap();
        let actions = Tensor::from_rows(&t.transitions.iter().map(|x| x.action.features.clone()).collect::<Vec<_>>()).unwrap();
        let f = model.forward(&mut tape, &states, &actions, 0, None).unwrap();
        assert_eq!(tape.value(f.rewards).data(), &r[..]);
    }

    #[test]
    fn chunked_matches_per_chunk_passes() {
        let p = RbtParams::new(&cfg(500), 2, 3, &mut SeededRng::seed_from_u64(3)).unwrap();
        let t = long_traj(600, 4);
        let r = relabel(&p, &t).unwrap();
        assert_eq!(r.len(), 600);
        let sub = |range: std::ops::Range<usize>| ObservedTrajectory {
            transitions: t.transitions[range.clone()].to_vec(),
            layout: partition_fixed(range.len(), range.len()).unwrap(),
            bag_rewards: vec![0.0],
        };
        let first = relabel(&p, &sub(0..500)).unwrap();
        let second = relabel(&p, &sub(500..600)).unwrap();
        assert_eq!(&r[..500], &first[..]);
        assert_eq!(&r[500..], &second[..]);
        // the boundary is visible: step 500 starts a fresh context
        let shifted = relabel(&p, &sub(100..600)).unwrap();
        assert_ne!(r[500], shifted[400]);
    }

    #[test]
    fn zero_model_is_constant() {
        let p = RbtParams::zeroed(&cfg(40), 2, 3).unwrap();
        let r = relabel(&p, &long_traj(90, 5)).unwrap();
        assert!(r.iter().all(|&v| v == r[0]));
    }

    #[test]
    fn deterministic() {
        let p = RbtParams::new(&cfg(40), 2, 3, &mut SeededRng::seed_from_u64(6)).unwrap();
        let t = long_traj(90, 7);
        assert_eq!(relabel(&p, &t).unwrap(), relabel(&p, &t).unwrap());
    }
}
