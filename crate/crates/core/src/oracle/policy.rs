use crate::envlab::TabularMdp;

use super::OracleError;

/// Largest policy space `optimal_policy_set` will enumerate.
pub const POLICY_BOUND: f64 = 1e6;

/// Values within this distance of the best count as optimal.
pub const TIE_TOL: f64 = 1e-9;

/// Time-dependent deterministic policy: an action for every `(state, t)`, `t < T`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DetPolicy {
    n_states: usize,
    horizon: usize,
    table: Vec<usize>,
}

impl DetPolicy {
    pub fn new(n_states: usize, horizon: usize, table: Vec<usize>) -> Self {
        assert_eq!(table.len(), n_states * horizon);
        Self { n_states, horizon, table }
    }

    pub fn constant(n_states: usize, horizon: usize, action: usize) -> Self {
        Self::new(n_states, horizon, vec![action; n_states * horizon])
    }

    pub fn action(&self, s: usize, t: usize) -> usize {
        self.table[t * self.n_states + s]
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn table(&self) -> &[usize] {
        &self.table
    }

    pub(crate) fn check(&self, mdp: &TabularMdp) -> Result<(), OracleError> {
        if self.n_states != mdp.n_states || self.horizon != mdp.horizon || self.table.iter().any(|&a| a >= mdp.n_actions)
        {
            return Err(OracleError::PolicyShape {
                policy_states: self.n_states,
                policy_horizon: self.horizon,
                states: mdp.n_states,
                horizon: mdp.horizon,
            });
        }
        Ok(())
    }
}

/// Every deterministic time-dependent policy of `mdp`, in lexicographic order.
pub fn enumerate_policies(mdp: &TabularMdp) -> Result<Vec<DetPolicy>, OracleError> {
    let cells = mdp.n_states * mdp.horizon;
    let count = (mdp.n_actions as f64).powi(cells as i32);
    if count > POLICY_BOUND {
        return Err(OracleError::EnumerationBound { what: "policies", count, bound: POLICY_BOUND });
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut digits = vec![0usize; cells];
    loop {
        out.push(DetPolicy::new(mdp.n_states, mdp.horizon, digits.clone()));
        // odometer increment, least significant digit last
        let mut i = cells;
        loop {
            if i == 0 {
                return Ok(out);
            }
            i -= 1;
            digits[i] += 1;
            if digits[i] < mdp.n_actions {
                break;
            }
            digits[i] = 0;
        }
    }
}

/// Argmax set of an objective over all deterministic policies.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicySet {
    pub best: f64,
    pub policies: Vec<DetPolicy>,
}

impl PolicySet {
    pub fn contains(&self, p: &DetPolicy) -> bool {
        self.policies.binary_search(p).is_ok()
    }

    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }

    pub(crate) fn from_values(policies: &[DetPolicy], values: &[f64]) -> Self {
        let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut set: Vec<DetPolicy> = policies
            .iter()
            .zip(values)
            .filter(|(_, &v)| v >= best - TIE_TOL)
            .map(|(p, _)| p.clone())
            .collect();
        set.sort();
        Self { best, policies: set }
    }
}

/// All policies maximizing `objective` within [`TIE_TOL`].
pub fn optimal_policy_set(
    mdp: &TabularMdp,
    objective: &mut dyn FnMut(&DetPolicy) -> Result<f64, OracleError>,
) -> Result<PolicySet, OracleError> {
    let policies = enumerate_policies(mdp)?;
    let values = policies.iter().map(&mut *objective).collect::<Result<Vec<_>, _>>()?;
    Ok(PolicySet::from_values(&policies, &values))
}
