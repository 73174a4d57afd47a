use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use serde::Serialize;

use crate::envlab::{partition_fixed, rollout, Act, BaggedTrajectory, GroundTruth, SeededRng, SpaceKind};
use crate::oracle::value_iteration;
use crate::rbt::{load_checkpoint, relabel, RbtError, RbtParams};

use super::stats::pearson;
use super::{io_err, ExperimentConfig, HarnessError};

/// Exploration rate of the tabular dump policy around the optimal one.
pub const DUMP_EPSILON: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub t: usize,
    pub r_hat: f64,
    pub hidden: f64,
    /// `R(B)/n` of the bag holding step `t`.
    pub bag_uniform: f64,
    /// Correlation of `r_hat` with `hidden` over the whole trajectory; the
    /// same on every row.
    pub pearson: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RewardComparison {
    pub rows: Vec<ComparisonRow>,
    pub pearson: Option<f64>,
}

impl RewardComparison {
    pub fn r_hat(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.r_hat).collect()
    }

    pub fn hidden(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.hidden).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Predicted, hidden and uniform-bag rewards side by side for one trajectory.
pub fn reward_comparison(params: &RbtParams, bagged: &BaggedTrajectory) -> Result<RewardComparison, HarnessError> {
    let obs = bagged.observed();
    let r_hat = relabel(params, obs)?;
    let hidden = bagged.hidden_rewards(GroundTruth::evaluator());
    let uniform = obs.uniform_bag_view();
    let p = pearson(&r_hat, hidden);
    let rows = (0..obs.len())
        .map(|t| ComparisonRow { t, r_hat: r_hat[t], hidden: hidden[t], bag_uniform: uniform[t], pearson: p })
        .collect();
    Ok(RewardComparison { rows, pearson: p })
}

/// Loads a trained checkpoint, rolls out one full evaluation trajectory with
/// bags of `bag_len`, and writes the comparison CSV to `out`.
///
/// Tabular environments follow the optimal policy with probability
/// `1 - DUMP_EPSILON` and a uniform action otherwise; continuous ones act
/// uniformly at random.
pub fn dump_rewards(
    config: &ExperimentConfig,
    checkpoint: &Path,
    bag_len: usize,
    seed: u64,
    out: &Path,
) -> Result<RewardComparison, HarnessError> {
    config.validate()?;
    let rbt = config.rbt_config()?;
    let params = load_checkpoint(checkpoint, &rbt)?;
    let mut env = config.env.build();
    if (params.state_dim, params.action_dim) != (env.state_dim(), env.action_dim()) {
        return Err(RbtError::ConfigMismatch.into());
    }
    let mut rng = SeededRng::seed_from_u64(seed);
    let mut policy_rng = SeededRng::seed_from_u64(rng.random());
    let optimal = config.env.tabular().map(|mdp| value_iteration(&mdp, &mdp.hidden_reward)).transpose()?;
    let space = env.space();
    let traj = rollout(
        env.as_mut(),
        &mut |obs, t| match (space, &optimal, obs.id) {
            (SpaceKind::Discrete { n_actions, .. }, Some(vi), Some(s)) => {
                let a = if policy_rng.random::<f64>() < DUMP_EPSILON {
                    policy_rng.random_range(0..n_actions)
                } else {
                    vi.greedy_actions(t, s)[0]
                };
                Act::discrete(a, n_actions)
            }
            (SpaceKind::Continuous { action_dim, .. }, ..) => {
                Act::continuous((0..action_dim).map(|_| policy_rng.random_range(-1.0..1.0)).collect())
            }
            _ => unreachable!("tabular environments emit state ids"),
        },
        &mut rng,
    )?;
    let layout = partition_fixed(traj.len(), bag_len)?;
    let bagged = BaggedTrajectory::new(traj, layout)?;
    let cmp = reward_comparison(&params, &bagged)?;
    let file = File::create(out).map_err(io_err(out))?;
    cmp.write_csv(BufWriter::new(file))?;
    Ok(cmp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envlab::{gridworld_5x5, Obs, TabularEnv, Trajectory, Transition};
    use crate::harness::{EnvSpec, RegimeSpec};
    use crate::rbt::{save_checkpoint, RbtConfig};

    fn bagged(n: usize, bag: usize) -> BaggedTrajectory {
        let mdp = gridworld_5x5();
        let transitions = (0..n)
            .map(|i| Transition {
                state: Obs::discrete(i % 25, 25),
                action: Act::discrete(i % 4, 4),
                next_state: Obs::discrete((i + 1) % 25, 25),
                done: false,
            })
            .collect();
        let hidden = (0..n).map(|i| mdp.reward(i % 25, i % 4) + 0.1 * (i % 3) as f64).collect();
        BaggedTrajectory::new(Trajectory::new(transitions, hidden), partition_fixed(n, bag).unwrap()).unwrap()
    }

    fn small_rbt() -> RbtConfig {
        RbtConfig { embed_dim: 8, n_heads: 2, seq_len: 10, relabel_len: 10, ..RbtConfig::desk() }
    }

    #[test]
    fn zero_model_gives_constant_column() {
        let p = RbtParams::zeroed(&small_rbt(), 25, 4).unwrap();
        let cmp = reward_comparison(&p, &bagged(23, 5)).unwrap();
        assert_eq!(cmp.rows.len(), 23);
        assert!(cmp.rows.iter().all(|r| r.r_hat == cmp.rows[0].r_hat));
        assert_eq!(cmp.pearson, None);
    }

    #[test]
    fn bag_column_is_mean_bag_reward() {
        let b = bagged(23, 5);
        let p = RbtParams::new(&small_rbt(), 25, 4, &mut SeededRng::seed_from_u64(1)).unwrap();
        let cmp = reward_comparison(&p, &b).unwrap();
        for (bag, big_r) in b.layout().bags().iter().zip(b.bag_rewards()) {
            for t in bag.range() {
                assert_eq!(cmp.rows[t].bag_uniform, big_r / bag.len as f64);
            }
        }
    }

    #[test]
    fn pearson_column_matches_recomputation() {
        let b = bagged(40, 8);
        let p = RbtParams::new(&small_rbt(), 25, 4, &mut SeededRng::seed_from_u64(2)).unwrap();
        let cmp = reward_comparison(&p, &b).unwrap();
        let (x, y) = (cmp.r_hat(), cmp.hidden());
        let n = x.len() as f64;
        let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
        let cov: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        let expect = cov / (vx * vy).sqrt();
        assert!((cmp.pearson.unwrap() - expect).abs() < 1e-12);
        assert!(cmp.rows.iter().all(|r| r.pearson == cmp.pearson));
    }

    #[test]
    fn dump_from_checkpoint_and_mismatch() {
        let tmp = tempfile::tempdir().unwrap();
        let mut rbt = toml::Table::new();
        for (k, v) in [("embed_dim", 8), ("n_heads", 2), ("seq_len", 10), ("relabel_len", 10)] {
            rbt.insert(k.into(), toml::Value::Integer(v));
        }
        let config = ExperimentConfig {
            env: EnvSpec::Gridworld { size: 5, horizon: 200 },
            regime: RegimeSpec::Length(5),
            redistributor: crate::baselines::RedistributorKind::Rbt,
            learner: None,
            rbt_base: Default::default(),
            rbt,
            rrd: Default::default(),
            loop_config: Default::default(),
            seeds: vec![0],
            output_dir: tmp.path().to_path_buf(),
        };
        let params = RbtParams::new(&config.rbt_config().unwrap(), 25, 4, &mut SeededRng::seed_from_u64(3)).unwrap();
        let ckpt = tmp.path().join("m.ckpt");
        save_checkpoint(&params, &ckpt).unwrap();
        let out = tmp.path().join("dump.csv");
        let cmp = dump_rewards(&config, &ckpt, 5, 7, &out).unwrap();
        let text = std::fs::read_to_string(&out).unwrap();
        assert!(text.starts_with("t,r_hat,hidden,bag_uniform,pearson\n"));
        assert_eq!(text.lines().count(), cmp.rows.len() + 1);
        assert_eq!(cmp, dump_rewards(&config, &ckpt, 5, 7, &out).unwrap());
        let env = TabularEnv::new(gridworld_5x5());
        assert!(cmp.rows.len() <= crate::envlab::Environment::horizon(&env));

        let mut other = config.clone();
        other.rbt.insert("embed_dim".into(), toml::Value::Integer(4));
        assert!(matches!(dump_rewards(&other, &ckpt, 5, 7, &out), Err(HarnessError::Rbt(RbtError::ConfigMismatch))));
        let chain = ExperimentConfig { env: EnvSpec::Chain { n: 4 }, regime: RegimeSpec::Length(2), ..config };
        assert!(matches!(dump_rewards(&chain, &ckpt, 2, 7, &out), Err(HarnessError::Rbt(RbtError::ConfigMismatch))));
    }
}
