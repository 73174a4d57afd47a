//! Experiment configuration, seeded runs and sweeps, reward-comparison dumps,
//! and the self-checks exposed on the command line.

mod checks;
mod config;
mod dump;
mod plot;
mod run;
mod stats;

pub use checks::{gradcheck_rbt, theorem1_suite, GradcheckReport, SuiteReport};
pub use config::{EnvSpec, ExperimentConfig, RbtBase, RegimeSpec};
pub use dump::{dump_rewards, reward_comparison, ComparisonRow, RewardComparison, DUMP_EPSILON};
pub use plot::{learning_curve_svg, Series};
pub use run::{
    mean_curve, read_log_finals, run, run_seed, summarize, sweep_bag_lengths, CellReport, SeedOutcome, SummaryRow, SweepReport,
};
pub use stats::{mean, pearson, population_std};

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};

use thiserror::Error;

use crate::agent::AgentError;
use crate::baselines::BaselineError;
use crate::envlab::EnvError;
use crate::oracle::OracleError;
use crate::rbt::RbtError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Rbt(#[from] RbtError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> HarnessError {
    let path = path.into();
    move |source| HarnessError::Io { path, source }
}

/// Default worker count: the available hardware parallelism.
pub fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Applies `f` to every item on up to `workers` threads. Results come back in
/// input order.
pub fn parallel_map<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let mut tagged: Vec<(usize, R)> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                scope.spawn(|| {
                    let mut out = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= items.len() {
                            break out;
                        }
                        out.push((i, f(&items[i])));
                    }
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    });
    tagged.sort_by_key(|(i, _)| *i);
    tagged.into_iter().map(|(_, r)| r).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_map_keeps_order() {
        let items: Vec<u64> = (0..37).collect();
        let serial: Vec<u64> = items.iter().map(|x| x * x).collect();
        assert_eq!(parallel_map(&items, 4, |x| x * x), serial);
        assert_eq!(parallel_map(&items, 1, |x| x * x), serial);
        assert!(parallel_map(&[] as &[u64], 3, |x| *x).is_empty());
    }
}
