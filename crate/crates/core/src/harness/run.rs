use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::agent::{rlbr_loop, LogRow, Learner, Redistributor, TrainingLog};
use crate::baselines::RedistributorKind;
use crate::envlab::SeededRng;
use crate::rbt::save_checkpoint;

use super::plot::{learning_curve_svg, Series};
use super::stats::{mean, population_std};
use super::{io_err, parallel_map, ExperimentConfig, HarnessError, RegimeSpec};

/// Runs one seed. Model and learner initialization draw from `seed`'s
/// default stream; the loop derives its own streams from the same seed.
pub fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<(TrainingLog, Redistributor), HarnessError> {
    let rbt = config.rbt_config()?;
    let mut env = config.env.build();
    let mut init = SeededRng::seed_from_u64(seed);
    let mut redistributor = Redistributor::new(config.redistributor, &rbt, &config.rrd, env.space(), &mut init)?;
    let mut learner = Learner::new(&config.learner_kind(), env.space(), &mut init)?;
    let log = rlbr_loop(env.as_mut(), config.regime.regime(), &mut redistributor, &mut learner, &config.loop_config, seed)?;
    Ok((log, redistributor))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub cell: String,
    pub n_seeds: usize,
    pub final_mean: f64,
    pub final_std: f64,
}

pub fn summarize(cell: &str, finals: &[f64]) -> SummaryRow {
    SummaryRow { cell: cell.to_string(), n_seeds: finals.len(), final_mean: mean(finals), final_std: population_std(finals) }
}

#[derive(Clone, Debug)]
pub struct SeedOutcome {
    pub seed: u64,
    pub result: Result<TrainingLog, String>,
}

#[derive(Clone, Debug)]
pub struct CellReport {
    pub label: String,
    pub config: ExperimentConfig,
    /// Set when the cell was rejected before running.
    pub error: Option<String>,
    pub seeds: Vec<SeedOutcome>,
    /// Over the seeds that completed.
    pub summary: Option<SummaryRow>,
}

impl CellReport {
    pub fn ok(&self) -> bool {
        self.error.is_none() && self.seeds.iter().all(|s| s.result.is_ok())
    }

    pub fn finals(&self) -> Vec<f64> {
        self.seeds.iter().filter_map(|s| s.result.as_ref().ok()?.final_return()).collect()
    }

    pub fn median_final(&self) -> Option<f64> {
        let mut v = self.finals();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
    }

    pub fn dir(&self) -> PathBuf {
        self.config.output_dir.join(&self.label)
    }
}

pub fn seed_log_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("seed{seed}.csv"))
}

pub fn seed_checkpoint_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("seed{seed}.ckpt"))
}

fn write_seed(dir: &Path, seed: u64, log: &TrainingLog, redistributor: &Redistributor) -> Result<(), HarnessError> {
    let path = seed_log_path(dir, seed);
    let file = File::create(&path).map_err(io_err(&path))?;
    log.write_csv(BufWriter::new(file))?;
    if let Redistributor::Rbt(t) = redistributor {
        save_checkpoint(&t.params, &seed_checkpoint_path(dir, seed))?;
    }
    Ok(())
}

fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<(), HarnessError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Final evaluation return of each seed, read back from the written logs.
pub fn read_log_finals(dir: &Path, seeds: &[u64]) -> Result<Vec<f64>, HarnessError> {
    seeds
        .iter()
        .map(|&s| {
            let path = seed_log_path(dir, s);
            let mut r = csv::Reader::from_path(&path)?;
            let rows: Vec<LogRow> = r.deserialize().collect::<Result<_, _>>()?;
            rows.last()
                .map(|row| row.eval_return_mean)
                .ok_or_else(|| HarnessError::Config(format!("{} has no rows", path.display())))
        })
        .collect()
}

/// Evaluation curve averaged over seeds by row index, truncated to the
/// shortest log.
pub fn mean_curve(logs: &[&TrainingLog]) -> Vec<(f64, f64)> {
    let n = logs.iter().map(|l| l.rows.len()).min().unwrap_or(0);
    (0..n)
        .map(|i| {
            let steps: Vec<f64> = logs.iter().map(|l| l.rows[i].step as f64).collect();
            let rets: Vec<f64> = logs.iter().map(|l| l.rows[i].eval_return_mean).collect();
            (mean(&steps), mean(&rets))
        })
        .collect()
}

/// Runs every (cell, seed) pair on the worker pool and reduces per cell.
fn execute(cells: Vec<Result<ExperimentConfig, (ExperimentConfig, String)>>, workers: usize) -> Vec<CellReport> {
    let mut jobs = Vec::new();
    for (ci, cell) in cells.iter().enumerate() {
        if let Ok(c) = cell {
            let dir = c.output_dir.join(c.cell_label());
            let prepared = fs::create_dir_all(&dir)
                .and_then(|_| fs::write(dir.join("config.toml"), c.to_toml()))
                .map_err(|e| format!("{}: {e}", dir.display()));
            for &seed in &c.seeds {
                jobs.push((ci, seed, prepared.clone()));
            }
        }
    }
    let outcomes = parallel_map(&jobs, workers, |(ci, seed, prepared)| {
        let config = cells[*ci].as_ref().expect("only valid cells are scheduled");
        let result = prepared.clone().and_then(|_| {
            let (log, red) = run_seed(config, *seed).map_err(|e| e.to_string())?;
            write_seed(&config.output_dir.join(config.cell_label()), *seed, &log, &red).map_err(|e| e.to_string())?;
            Ok(log)
        });
        SeedOutcome { seed: *seed, result }
    });

    let mut per_cell: Vec<Vec<SeedOutcome>> = cells.iter().map(|_| Vec::new()).collect();
    for ((ci, _, _), outcome) in jobs.iter().zip(outcomes) {
        per_cell[*ci].push(outcome);
    }
    cells
        .into_iter()
        .zip(per_cell)
        .map(|(cell, seeds)| {
            let (config, error) = match cell {
                Ok(c) => (c, None),
                Err((c, e)) => (c, Some(e)),
            };
            let label = config.cell_label();
            let mut report = CellReport { label, config, error, seeds, summary: None };
            let finals = report.finals();
            if !finals.is_empty() {
                report.summary = Some(summarize(&report.label, &finals));
            }
            report
        })
        .collect()
}

/// Runs every seed of one configuration. Writes `seed<k>.csv` (and
/// `seed<k>.ckpt` for the bag-aware model), `config.toml` and `summary.csv`
/// under `output_dir/<cell>`. An invalid config fails before any run.
pub fn run(config: &ExperimentConfig, workers: usize) -> Result<CellReport, HarnessError> {
    config.validate()?;
    let report = execute(vec![Ok(config.clone())], workers).pop().expect("one cell");
    if let Some(row) = &report.summary {
        write_summary(&report.dir().join("summary.csv"), std::slice::from_ref(row))?;
    }
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct SweepReport {
    pub cells: Vec<CellReport>,
}

impl SweepReport {
    pub fn ok(&self) -> bool {
        self.cells.iter().all(CellReport::ok)
    }

    pub fn cell(&self, len: usize, method: RedistributorKind) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.config.regime == RegimeSpec::Length(len) && c.config.redistributor == method)
    }
}

/// Cross product of bag lengths and methods on top of `base`. Cells that fail
/// validation or crash are reported and the sweep goes on. Writes the
/// combined `summary.csv` and a learning-curve SVG per environment under
/// `base.output_dir`.
pub fn sweep_bag_lengths(
    base: &ExperimentConfig,
    lengths: &[usize],
    methods: &[RedistributorKind],
    workers: usize,
) -> Result<SweepReport, HarnessError> {
    if lengths.is_empty() || methods.is_empty() {
        return Err(HarnessError::Config("sweep needs at least one length and one method".into()));
    }
    let cells = lengths
        .iter()
        .flat_map(|&len| methods.iter().map(move |&m| (len, m)))
        .map(|(len, m)| {
            let c = ExperimentConfig { regime: RegimeSpec::Length(len), redistributor: m, ..base.clone() };
            match c.validate() {
                Ok(()) => Ok(c),
                Err(e) => Err((c, e.to_string())),
            }
        })
        .collect();
    let report = SweepReport { cells: execute(cells, workers) };

    fs::create_dir_all(&base.output_dir).map_err(io_err(&base.output_dir))?;
    let rows: Vec<SummaryRow> = report.cells.iter().filter_map(|c| c.summary.clone()).collect();
    write_summary(&base.output_dir.join("summary.csv"), &rows)?;
    let series: Vec<Series> = report
        .cells
        .iter()
        .filter_map(|c| {
            let logs: Vec<&TrainingLog> = c.seeds.iter().filter_map(|s| s.result.as_ref().ok()).collect();
            (!logs.is_empty()).then(|| Series {
                name: format!("{} {}", c.config.redistributor.label(), c.config.regime.regime().label()),
                points: mean_curve(&logs),
            })
        })
        .collect();
    let env = base.env.label();
    let svg = learning_curve_svg(&format!("{env} bag-length sweep"), "environment steps", "mean eval return", &series);
    let path = base.output_dir.join(format!("{env}_curves.svg"));
    fs::write(&path, svg).map_err(io_err(&path))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::LoopConfig;
    use crate::harness::EnvSpec;

    fn tiny(dir: &Path, method: RedistributorKind, seeds: Vec<u64>) -> ExperimentConfig {
        let mut rbt = toml::Table::new();
        for (k, v) in [("embed_dim", 8), ("n_heads", 2), ("seq_len", 8), ("relabel_len", 8), ("batch_size", 4)] {
            rbt.insert(k.into(), toml::Value::Integer(v));
        }
        ExperimentConfig {
            env: EnvSpec::Chain { n: 4 },
            regime: RegimeSpec::Length(2),
            redistributor: method,
            learner: None,
            rbt_base: Default::default(),
            rbt,
            rrd: Default::default(),
            loop_config: LoopConfig {
                total_steps: 300,
                eval_interval: 100,
                eval_episodes: 2,
                pretrain_steps: 50,
                pretrain_iters: 3,
                iters_per_update: 1,
                update_every: 50,
                ..LoopConfig::default()
            },
            seeds,
            output_dir: dir.to_path_buf(),
        }
    }

    #[test]
    fn single_seed_writes_one_log() {
        let tmp = tempfile::tempdir().unwrap();
        let c = tiny(tmp.path(), RedistributorKind::Rbt, vec![0]);
        let report = run(&c, 1).unwrap();
        assert!(report.ok());
        let dir = report.dir();
        let logs: Vec<_> = fs::read_dir(&dir).unwrap().filter_map(|e| e.ok()).filter(|e| e.path().extension().is_some_and(|x| x == "csv")).collect();
        assert_eq!(logs.len(), 2, "seed log plus summary");
        assert!(seed_checkpoint_path(&dir, 0).exists());
        assert_eq!(ExperimentConfig::load(&dir.join("config.toml")).unwrap(), c);
    }

    #[test]
    fn rerun_is_byte_identical() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ra = run(&tiny(a.path(), RedistributorKind::Rbt, vec![3, 4]), 2).unwrap();
        let rb = run(&tiny(b.path(), RedistributorKind::Rbt, vec![3, 4]), 1).unwrap();
        for name in ["seed3.csv", "seed4.csv", "seed3.ckpt", "summary.csv"] {
            assert_eq!(fs::read(ra.dir().join(name)).unwrap(), fs::read(rb.dir().join(name)).unwrap(), "{name}");
        }
    }

    #[test]
    fn six_seed_summary_matches_logs() {
        let tmp = tempfile::tempdir().unwrap();
        let seeds: Vec<u64> = (0..6).collect();
        let c = ExperimentConfig { env: EnvSpec::Gridworld { size: 3, horizon: 20 }, ..tiny(tmp.path(), RedistributorKind::Raw, seeds.clone()) };
        let report = run(&c, 1).unwrap();
        let finals = read_log_finals(&report.dir(), &seeds).unwrap();
        let hand = finals.iter().sum::<f64>() / 6.0;
        let summary = report.summary.clone().unwrap();
        assert_eq!(summary.final_mean, hand);
        assert_eq!(summary.n_seeds, 6);
        let mut r = csv::Reader::from_path(report.dir().join("summary.csv")).unwrap();
        let written: Vec<SummaryRow> = r.deserialize().collect::<Result<_, _>>().unwrap();
        assert_eq!(written, vec![summary]);
    }

    #[test]
    fn invalid_config_runs_nothing() {
        let tmp = tempfile::tempdir().unwrap();
        let c = ExperimentConfig { seeds: vec![], ..tiny(tmp.path(), RedistributorKind::Raw, vec![]) };
        assert!(run(&c, 1).is_err());
        assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 0);
    }

    #[test]
    fn sweep_counts_cells_and_continues_past_bad_ones() {
        let tmp = tempfile::tempdir().unwrap();
        let c = tiny(tmp.path(), RedistributorKind::Raw, vec![0]);
        let methods = [RedistributorKind::Raw, RedistributorKind::Ircr, RedistributorKind::Rrd { k: 0 }];
        let report = sweep_bag_lengths(&c, &[1, 3], &methods, 2).unwrap();
        assert_eq!(report.cells.len(), 6);
        assert!(!report.ok());
        assert_eq!(report.cells.iter().filter(|c| c.ok()).count(), 4);
        let mut r = csv::Reader::from_path(tmp.path().join("summary.csv")).unwrap();
        assert_eq!(r.deserialize::<SummaryRow>().count(), 4);
        let svg = fs::read_to_string(tmp.path().join("chain4_curves.svg")).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 4);
        assert!(sweep_bag_lengths(&c, &[], &methods, 1).is_err());
    }

    #[test]
    fn length_one_is_standard_rl_and_horizon_is_trajectory_feedback() {
        let tmp = tempfile::tempdir().unwrap();
        let c = tiny(tmp.path(), RedistributorKind::Raw, vec![0]);
        let report = sweep_bag_lengths(&c, &[1, 9999], &[RedistributorKind::Raw], 1).unwrap();
        assert!(report.ok());
        let step = report.cell(1, RedistributorKind::Raw).unwrap();
        assert_eq!(step.config.regime.regime(), crate::envlab::BagRegime::Fixed { len: 1 });
        let whole = report.cell(9999, RedistributorKind::Raw).unwrap();
        assert_eq!(whole.config.regime.regime(), crate::envlab::BagRegime::Trajectory);
        for cell in [step, whole] {
            let log = cell.seeds[0].result.as_ref().unwrap();
            assert_eq!(log.rows.last().unwrap().reward_residual, Some(0.0));
        }
    }
}
