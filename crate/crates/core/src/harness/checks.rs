use rand::{Rng, SeedableRng};

use crate::envlab::{partition_fixed, Act, BaggedTrajectory, Obs, ObservedTrajectory, SeededRng, TabularMdp, Trajectory, Transition};
use crate::numcore::{central_difference, relative_error};
use crate::oracle::{bag_preserving_perturbation, check_theorem1, Redistribution, TabularRedistribution, Theorem1Report};
use crate::rbt::{batch_loss, loss_and_grads, BagBatch, RbtConfig, RbtParams};

use super::HarnessError;

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub instances: usize,
    pub passed: usize,
    pub max_gap: f64,
    pub max_condition_violation: f64,
    /// Index and report of every failing instance.
    pub failures: Vec<(usize, Theorem1Report)>,
}

impl SuiteReport {
    pub fn all_passed(&self) -> bool {
        self.passed == self.instances
    }
}

/// `n` random MDPs with at most 3 states, 2 actions and horizon at most 4,
/// alternating deterministic and stochastic transitions. Each gets a random
/// fixed bag length and a bag-sum-preserving redistribution: the hidden
/// table on even instances, a path-dependent perturbation on odd ones. An
/// instance passes when the bag-sum condition holds, every policy has
/// `|J_B - J_rhat| <= 1e-9`, and the two optimal-policy sets coincide.
pub fn theorem1_suite(n: usize, seed: u64) -> Result<SuiteReport, HarnessError> {
    let mut rng = SeededRng::seed_from_u64(seed);
    let mut report = SuiteReport { instances: n, passed: 0, max_gap: 0.0, max_condition_violation: 0.0, failures: Vec::new() };
    for i in 0..n {
        let states = rng.random_range(1..=3);
        let horizon = rng.random_range(1..=4);
        let mdp = TabularMdp::random(states, 2, horizon, i % 2 == 0, &mut rng);
        let bag = rng.random_range(1..=horizon);
        let layout = move |len: usize| partition_fixed(len, bag).expect("positive bag length");
        let eps = rng.random_range(-1.0..1.0);
        let hidden = TabularRedistribution::hidden(&mdp);
        let perturbed = bag_preserving_perturbation(&mdp, eps);
        let rhat: &dyn Redistribution = if i % 2 == 0 { &hidden } else { &perturbed };
        let r = check_theorem1(&mdp, &layout, rhat)?;
        report.max_gap = report.max_gap.max(r.max_gap);
        report.max_condition_violation = report.max_condition_violation.max(r.condition_violation);
        if r.passed() && r.bagged_optimal.policies == r.redistributed_optimal.policies {
            report.passed += 1;
        } else {
            report.failures.push((i, r));
        }
    }
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub seed: u64,
    pub n_params: usize,
    pub max_rel_error: f64,
    /// Flat index of the worst parameter.
    pub worst: usize,
}

/// Configuration used by [`gradcheck_rbt`]: one causal layer, embedding 8.
pub fn gradcheck_config() -> RbtConfig {
    RbtConfig {
        n_causal_layers: 1,
        n_heads: 2,
        embed_dim: 8,
        dropout: 0.0,
        seq_len: 6,
        relabel_len: 6,
        beta: 0.7,
        ..RbtConfig::default()
    }
}

fn random_buffer(rng: &mut SeededRng) -> Vec<ObservedTrajectory> {
    (0..2)
        .map(|k| {
            let n = 5 + k;
            let mut s: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut transitions = Vec::new();
            let mut hidden = Vec::new();
            for t in 0..n {
                let a: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
                let next: Vec<f64> = s.iter().zip(a.iter().cycle()).map(|(x, u)| 0.9 * x + 0.2 * u).collect();
                hidden.push(rng.random_range(-1.0..1.0));
                transitions.push(Transition {
                    state: Obs::continuous(s.clone()),
                    action: Act::continuous(a),
                    next_state: Obs::continuous(next.clone()),
                    done: t + 1 == n && k == 0,
                });
                s = next;
            }
            BaggedTrajectory::new(Trajectory::new(transitions, hidden), partition_fixed(n, 2).unwrap())
                .unwrap()
                .into_observed()
        })
        .collect()
}

/// Analytic gradient of the full composite loss against central differences
/// (`h = 1e-5`) over every parameter of a small model whose weights are
/// spread to `±0.5` so the nonlinearities are exercised.
pub fn gradcheck_rbt(seed: u64) -> Result<GradcheckReport, HarnessError> {
    let mut rng = SeededRng::seed_from_u64(seed);
    let config = gradcheck_config();
    let mut params = RbtParams::new(&config, 3, 2, &mut rng)?;
    let spread: Vec<f64> = params.flat().iter().map(|v| v + rng.random_range(-0.5..0.5)).collect();
    params.set_flat(&spread)?;
    let data = random_buffer(&mut rng);
    let refs: Vec<&ObservedTrajectory> = data.iter().collect();
    let batch = BagBatch::covering(&refs, config.seq_len)?;
    let (_, grads) = loss_and_grads(&params, &batch, None)?;
    let analytic: Vec<f64> = grads.iter().flat_map(|g| g.data().iter().copied()).collect();
    let mut probe = params.clone();
    let mut failure = None;
    let numeric = central_difference(
        &mut |x| {
            let r = probe.set_flat(x).map_err(HarnessError::from).and_then(|_| Ok(batch_loss(&probe, &batch)?.total));
            r.unwrap_or_else(|e| {
                failure.get_or_insert(e);
                f64::NAN
            })
        },
        &spread,
        1e-5,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let (worst, max_rel_error) = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, b)| relative_error(*a, *b))
        .enumerate()
        .fold((0, 0.0), |best, (i, e)| if e > best.1 { (i, e) } else { best });
    Ok(GradcheckReport { seed, n_params: analytic.len(), max_rel_error, worst })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let r = theorem1_suite(6, 11).unwrap();
        assert!(r.all_passed(), "{:?}", r.failures);
        assert!(r.max_gap <= 1e-9);
    }

    #[test]
    fn gradcheck_one_seed() {
        let r = gradcheck_rbt(0).unwrap();
        assert!(r.max_rel_error <= 1e-4, "{r:?}");
        assert_eq!(r.n_params, RbtParams::zeroed(&gradcheck_config(), 3, 2).unwrap().n_scalars());
    }
}
