use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envlab::{BagSpec, ObservedTrajectory, SeededRng};
use crate::numcore::{adamw_step, Activation, AdamWConfig, Mlp, OptimState, Tape, Tensor};

use super::BaselineError;

fn check_subset(bag: BagSpec, subset: &[usize]) -> Result<(), BaselineError> {
    if subset.is_empty() {
        return Err(BaselineError::ZeroSubset);
    }
    if subset.len() > bag.len {
        return Err(BaselineError::SubsetSize { k: subset.len(), n: bag.len });
    }
    let mut seen = subset.to_vec();
    seen.sort_unstable();
    for w in seen.windows(2) {
        if w[0] == w[1] {
            return Err(BaselineError::SubsetIndex { index: w[0] });
        }
    }
    match subset.iter().find(|&&i| !bag.contains(i)) {
        Some(&i) => Err(BaselineError::SubsetIndex { index: i }),
        None => Ok(()),
    }
}

/// `(n/K) * sum_{t in subset} r_hat_t` for a subset of absolute step indices
/// inside `bag`.
pub fn rrd_estimate(r_hat: &[f64], bag: BagSpec, subset: &[usize]) -> Result<f64, BaselineError> {
    check_subset(bag, subset)?;
    Ok(bag.len as f64 / subset.len() as f64 * subset.iter().map(|&i| r_hat[i]).sum::<f64>())
}

/// `(R(B) - (n/K) * sum_{t in subset} r_hat_t)^2`.
pub fn rrd_loss(r_hat: &[f64], bag: BagSpec, bag_reward: f64, subset: &[usize]) -> Result<f64, BaselineError> {
    let est = rrd_estimate(r_hat, bag, subset)?;
    Ok((bag_reward - est).powi(2))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RrdConfig {
    /// Subset size cap; each bag uses `min(k, n)`.
    pub k: usize,
    pub hidden: usize,
    pub lr: f64,
    pub batch_bags: usize,
}

impl Default for RrdConfig {
    fn default() -> Self {
        Self { k: 32, hidden: 64, lr: 1e-3, batch_bags: 32 }
    }
}

/// Per-step reward perceptron on `(s, a)` trained with the subset loss.
#[derive(Clone, Debug)]
pub struct RrdModel {
    pub config: RrdConfig,
    pub net: Mlp,
    optim: OptimState,
}

fn features(traj: &ObservedTrajectory, rows: impl Iterator<Item = usize>) -> Vec<Vec<f64>> {
    rows.map(|i| {
        let t = &traj.transitions[i];
        t.state.features.iter().chain(&t.action.features).copied().collect()
    })
    .collect()
}

impl RrdModel {
    pub fn new(config: RrdConfig, state_dim: usize, action_dim: usize, rng: &mut SeededRng) -> Result<Self, BaselineError> {
        if config.k == 0 {
            return Err(BaselineError::ZeroSubset);
        }
        let net = Mlp::new(&[state_dim + action_dim, config.hidden, 1], Activation::Relu, rng);
        let adam = AdamWConfig { lr: config.lr, weight_decay: 0.0, warmup_steps: 0, ..AdamWConfig::default() };
        let optim = OptimState::new(adam, &net.params);
        Ok(Self { config, net, optim })
    }

    pub fn predict(&self, traj: &ObservedTrajectory) -> Result<Vec<f64>, BaselineError> {
        if traj.is_empty() {
            return Ok(Vec::new());
        }
        let x = Tensor::from_rows(&features(traj, 0..traj.len()))?;
        if x.cols() != self.net.input_dim() {
            return Err(BaselineError::FeatureDim { expected: self.net.input_dim(), got: x.cols() });
        }
        Ok(self.net.predict(&x)?.into_data())
    }

    /// One AdamW step on `batch_bags` uniformly drawn bags, each with a
    /// uniformly drawn subset of `min(k, n)` steps. Returns the mean loss.
    pub fn train_step(&mut self, buffer: &[&ObservedTrajectory], rng: &mut SeededRng) -> Result<f64, BaselineError> {
        let usable: Vec<&&ObservedTrajectory> = buffer.iter().filter(|t| !t.layout.is_empty()).collect();
        if usable.is_empty() {
            return Err(BaselineError::EmptyBuffer);
        }
        let (mut rows, mut ranges, mut scales, mut targets) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for _ in 0..self.config.batch_bags {
            let traj = usable[rng.random_range(0..usable.len())];
            let i = rng.random_range(0..traj.layout.len());
            let bag = traj.layout.bags()[i];
            let k = self.config.k.min(bag.len);
            let start = rows.len();
            rows.extend(features(traj, sample(rng, bag.len, k).into_iter().map(|j| bag.start + j)));
            ranges.push((start, rows.len()));
            scales.push(bag.len as f64 / k as f64);
            targets.push(traj.bag_rewards[i]);
        }
        let mut tape = Tape::new();
        let vars = self.net.bind(&mut tape);
        let x = tape.constant(Tensor::from_rows(&rows)?);
        let r = self.net.forward(&mut tape, &vars, x)?;
        let sums = tape.segment_sums(r, &ranges)?;
        let scale = tape.constant(Tensor::vector(scales)?);
        let est = tape.mul(sums, scale)?;
        let target = tape.constant(Tensor::vector(targets)?);
        let diff = tape.sub(est, target)?;
        let sq = tape.square(diff)?;
        let loss = tape.mean_all(sq)?;
        let value = tape.value(loss).data()[0];
        let mut g = tape.backward(loss)?;
        let grads: Vec<Tensor> = vars.iter().map(|&v| g.take(v).expect("parameter gradient")).collect();
        let mut params: Vec<&mut Tensor> = self.net.params.iter_mut().collect();
        adamw_step(&mut params, &grads, &mut self.optim)?;
        Ok(value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envlab::{partition_fixed, Act, BaggedTrajectory, Obs, Trajectory, Transition};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
        if k == 0 {
            return vec![vec![]];
        }
        if n < k {
            return vec![];
        }
        let mut out = subsets(n - 1, k);
        for mut s in subsets(n - 1, k - 1) {
            s.push(n - 1);
            out.push(s);
        }
        out
    }

    #[test]
    fn full_subset_is_plain_bag_loss() {
        let r = [0.3, -1.2, 0.7, 2.0, 0.1];
        let bag = BagSpec::new(1, 3);
        let full = rrd_loss(&r, bag, 0.9, &[1, 2, 3]).unwrap();
        assert_eq!(full, (0.9 - (-1.2 + 0.7 + 2.0f64)).powi(2));
    }

    #[test]
    fn zero_model_loss() {
        assert_eq!(rrd_loss(&[0.0; 4], BagSpec::new(0, 4), 3.0, &[0, 2]).unwrap(), 9.0);
    }

    #[test]
    fn unbiased_over_all_pairs_of_four() {
        let r = [0.37, -1.91, 2.45, 0.08];
        let bag = BagSpec::new(0, 4);
        let all = subsets(4, 2);
        assert_eq!(all.len(), 6);
        let mean = all.iter().map(|s| rrd_estimate(&r, bag, s).unwrap()).sum::<f64>() / all.len() as f64;
        assert!((mean - r.iter().sum::<f64>()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn unbiased_exhaustive(r in proptest::collection::vec(-3.0f64..3.0, 1..7), kf in 0.0f64..1.0) {
            let n = r.len();
            let k = 1 + (kf * n as f64) as usize % n;
            let bag = BagSpec::new(0, n);
            let all = subsets(n, k);
            let mean = all.iter().map(|s| rrd_estimate(&r, bag, s).unwrap()).sum::<f64>() / all.len() as f64;
            prop_assert!((mean - r.iter().sum::<f64>()).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_subsets() {
        let r = [0.0; 6];
        let bag = BagSpec::new(1, 3);
        assert!(matches!(rrd_estimate(&r, bag, &[1, 2, 3, 1]), Err(BaselineError::SubsetSize { k: 4, n: 3 })));
        assert!(matches!(rrd_estimate(&r, bag, &[1, 1]), Err(BaselineError::SubsetIndex { index: 1 })));
        assert!(matches!(rrd_estimate(&r, bag, &[0]), Err(BaselineError::SubsetIndex { index: 0 })));
        assert!(matches!(rrd_estimate(&r, bag, &[]), Err(BaselineError::ZeroSubset)));
    }

    #[test]
    fn training_fits_a_linear_reward() {
        let mut rng = SeededRng::seed_from_u64(4);
        let buffer: Vec<ObservedTrajectory> = (0..10)
            .map(|_| {
                let n = 24;
                let ids: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
                let transitions = ids
                    .iter()
                    .map(|&s| Transition {
                        state: Obs::discrete(s, 4),
                        action: Act::discrete(0, 1),
                        next_state: Obs::discrete(s, 4),
                        done: false,
                    })
                    .collect();
                let hidden = ids.iter().map(|&s| [1.0, -0.5, 0.25, 0.0][s]).collect();
                BaggedTrajectory::new(Trajectory::new(transitions, hidden), partition_fixed(n, 6).unwrap())
                    .unwrap()
                    .into_observed()
            })
            .collect();
        let refs: Vec<&ObservedTrajectory> = buffer.iter().collect();
        let cfg = RrdConfig { k: 6, hidden: 16, lr: 3e-3, batch_bags: 16 };
        let mut m = RrdModel::new(cfg, 4, 1, &mut rng).unwrap();
        for _ in 0..1500 {
            m.train_step(&refs, &mut rng).unwrap();
        }
        let r = m.predict(&buffer[0]).unwrap();
        let ids: Vec<usize> = buffer[0].transitions.iter().map(|t| t.state.id.unwrap()).collect();
        for (v, s) in r.iter().zip(ids) {
            assert!((v - [1.0, -0.5, 0.25, 0.0][s]).abs() < 0.02, "{v} vs state {s}");
        }
    }
}
