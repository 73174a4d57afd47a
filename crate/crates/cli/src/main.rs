use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rlbr::baselines::RedistributorKind;
use rlbr::harness::{
    default_workers, dump_rewards, gradcheck_rbt, run, sweep_bag_lengths, theorem1_suite, CellReport, ExperimentConfig,
};

#[derive(Parser)]
#[command(name = "rlbr", version, about = "Reinforcement learning from bagged rewards")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Comma-separated seeds overriding the config.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Output directory overriding the config.
    #[arg(short, long)]
    output_dir: Option<PathBuf>,
    /// Worker threads; defaults to the available cores.
    #[arg(short, long)]
    workers: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut config =
            ExperimentConfig::load(&self.config).with_context(|| format!("loading {}", self.config.display()))?;
        if let Some(seeds) = &self.seeds {
            config.seeds = seeds.clone();
        }
        if let Some(dir) = &self.output_dir {
            config.output_dir = dir.clone();
        }
        config.validate()?;
        Ok(config)
    }

    fn workers(&self) -> usize {
        self.workers.unwrap_or_else(default_workers)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of one config and write logs plus a summary.
    Run(Common),
    /// Cross product of bag lengths and methods.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Bag lengths; 9999 is whole-trajectory feedback.
        #[arg(long, value_delimiter = ',', required = true)]
        lengths: Vec<usize>,
        /// raw, ircr, rrd, rrd:K or rbt. Defaults to the config's method.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
    },
    /// Predicted vs hidden vs uniform-bag rewards along one trajectory.
    DumpRewards {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        bag_len: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Exhaustive objective-equivalence check on random tiny MDPs.
    CheckTheorem1 {
        #[arg(long, default_value_t = 50)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Composite-loss gradients against central differences.
    Gradcheck {
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
}

fn parse_method(s: &str, default_k: usize) -> Result<RedistributorKind> {
    Ok(match s.trim() {
        "raw" => RedistributorKind::Raw,
        "ircr" => RedistributorKind::Ircr,
        "rbt" => RedistributorKind::Rbt,
        "rrd" => RedistributorKind::Rrd { k: default_k },
        other => match other.strip_prefix("rrd:") {
            Some(k) => RedistributorKind::Rrd { k: k.parse().with_context(|| format!("bad subset size in `{other}`"))? },
            None => bail!("unknown method `{other}`"),
        },
    })
}

fn print_cell(cell: &CellReport) {
    if let Some(e) = &cell.error {
        println!("{:<40} rejected: {e}", cell.label);
        return;
    }
    for s in &cell.seeds {
        if let Err(e) = &s.result {
            println!("{:<40} seed {} failed: {e}", cell.label, s.seed);
        }
    }
    if let Some(row) = &cell.summary {
        println!("{:<40} seeds {:>2}  final {:>9.4} +- {:.4}", cell.label, row.n_seeds, row.final_mean, row.final_std);
    }
}

fn exit(ok: bool) -> ExitCode {
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(common) => {
            let config = common.load()?;
            let report = run(&config, common.workers())?;
            print_cell(&report);
            Ok(exit(report.ok()))
        }
        Command::Sweep { common, lengths, methods } => {
            let config = common.load()?;
            let methods = match methods {
                Some(m) => m.iter().map(|s| parse_method(s, config.rrd.k)).collect::<Result<Vec<_>>>()?,
                None => vec![config.redistributor],
            };
            let report = sweep_bag_lengths(&config, &lengths, &methods, common.workers())?;
            report.cells.iter().for_each(print_cell);
            println!("summary: {}", config.output_dir.join("summary.csv").display());
            Ok(exit(report.ok()))
        }
        Command::DumpRewards { config, checkpoint, bag_len, seed, out } => {
            let config = ExperimentConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            let cmp = dump_rewards(&config, &checkpoint, bag_len, seed, &out)?;
            match cmp.pearson {
                Some(p) => println!("{} steps, pearson {p:.4}", cmp.rows.len()),
                None => println!("{} steps, pearson undefined", cmp.rows.len()),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::CheckTheorem1 { instances, seed } => {
            let r = theorem1_suite(instances, seed)?;
            println!(
                "{}/{} instances pass; max objective gap {:.3e}; max bag-sum violation {:.3e}",
                r.passed, r.instances, r.max_gap, r.max_condition_violation
            );
            for (i, f) in &r.failures {
                println!("instance {i}: gap {:.3e}, sets equal {:?}", f.max_gap, f.sets_equal);
            }
            Ok(exit(r.all_passed()))
        }
        Command::Gradcheck { seeds, tol } => {
            let mut ok = true;
            for seed in 0..seeds {
                let r = gradcheck_rbt(seed)?;
                let pass = r.max_rel_error <= tol;
                ok &= pass;
                println!(
                    "seed {seed}: {} params, max rel error {:.3e} at {} {}",
                    r.n_params,
                    r.max_rel_error,
                    r.worst,
                    if pass { "ok" } else { "FAIL" }
                );
            }
            Ok(exit(ok))
        }
    }
}
