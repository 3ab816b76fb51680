//! Command-line front end: `train`, `ablate`, `sweep`, `eval`, `stats`.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::parse_config;
use crate::credit::{dump_statistics, read_advantage_dump, DumpStatistics};
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::harness::{
    ablation_matrix, eval_task_seeds, evaluate, read_metrics, run_id, sweep, train_run,
    write_ablation_csv, write_sweep_csv, AblationVariant, GreedyAgent, TrainConfig,
};
use crate::policy::PolicyParams;

#[derive(Debug, Parser)]
#[command(name = "gagpo", version, about = "Critic-free grouped policy optimization on toy text environments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Configuration file of `key = value` lines.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override one key, applied after the file. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Shorthand for `--set train.seed=N`.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<TrainConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("train.seed={seed}"));
        }
        parse_config(self.config.as_deref(), &overrides)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one run and write its directory.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Run directory (default `runs/<run id>`).
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Run the full method and its six ablations on paired seeds.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_name = "DIR", default_value = "runs/ablation")]
        out: PathBuf,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
    },
    /// Run the (gamma, lambda) grid.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_name = "DIR", default_value = "runs/sweep")]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.8,0.95,1.0")]
        gammas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0.6,0.7,0.8,1.0")]
        lambdas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
    },
    /// Greedy evaluation of a checkpoint on the held-out task seeds.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
    },
    /// Recompute advantage and group-size statistics from an advantage dump.
    Stats {
        #[arg(long, value_name = "PATH")]
        dump: PathBuf,
        /// Compare against the record of the same step in this metrics file.
        #[arg(long, value_name = "PATH")]
        metrics: Option<PathBuf>,
    },
}

#[derive(Serialize)]
struct StatsReport {
    #[serde(flatten)]
    stats: DumpStatistics,
    #[serde(skip_serializing_if = "Option::is_none")]
    matches_metrics: Option<bool>,
}

fn ensure_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p)?;
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<PolicyParams> {
    let f = File::open(path).map_err(|e| {
        Error::Invalid(format!("cannot open checkpoint {}: {e}", path.display()))
    })?;
    PolicyParams::read_checkpoint(BufReader::new(f))
}

/// Executes a parsed command, writing human-readable output to `out`.
pub fn execute<W: Write>(cli: Cli, out: &mut W) -> Result<()> {
    match cli.command {
        Command::Train { config, out: dir } => {
            let c = config.resolve()?;
            let dir = dir.unwrap_or_else(|| PathBuf::from("runs").join(run_id(&c)));
            let summary = train_run(&c, Some(&dir))?;
            writeln!(out, "run {} -> {}", summary.run_id, dir.display())?;
            for p in &summary.evaluations {
                writeln!(
                    out,
                    "step {:>5}  success {:.3}  score {:.3}  length {:.1}",
                    p.step, p.result.success_rate, p.result.mean_score, p.result.mean_episode_length
                )?;
            }
        }
        Command::Ablate { config, out: dir, seeds } => {
            let c = config.resolve()?;
            ensure_dir(&dir)?;
            let rows = ablation_matrix(&c, None::<&[AblationVariant]>, &seeds, Some(&dir))?;
            let mut csv = Vec::new();
            write_ablation_csv(&mut csv, &rows)?;
            fs::write(dir.join("ablation.csv"), &csv)?;
            out.write_all(&csv)?;
        }
        Command::Sweep {
            config,
            out: dir,
            gammas,
            lambdas,
            seeds,
        } => {
            let c = config.resolve()?;
            ensure_dir(&dir)?;
            let cells = sweep(&c, &gammas, &lambdas, &seeds, Some(&dir))?;
            let mut csv = Vec::new();
            write_sweep_csv(&mut csv, &cells)?;
            fs::write(dir.join("sweep.csv"), &csv)?;
            out.write_all(&csv)?;
        }
        Command::Eval { config, checkpoint } => {
            let c = config.resolve()?;
            let env = Environment::new(c.env.clone())?;
            let policy = load_checkpoint(&checkpoint)?;
            if policy.vocab_size() != env.vocab().len() || policy.feature_dim() != env.vocab().len() + 1 {
                return Err(Error::Invalid(format!(
                    "checkpoint vocabulary {} does not match the {} environment ({})",
                    policy.vocab_size(),
                    c.env.name,
                    env.vocab().len()
                )));
            }
            let result = evaluate(&env, &mut GreedyAgent { policy: &policy }, &eval_task_seeds(c.eval_episodes))?;
            serde_json::to_writer(&mut *out, &result)?;
            writeln!(out)?;
        }
        Command::Stats { dump, metrics } => {
            let f = File::open(&dump)
                .map_err(|e| Error::Invalid(format!("cannot open dump {}: {e}", dump.display())))?;
            let stats = dump_statistics(&read_advantage_dump(BufReader::new(f))?)?;
            let matches_metrics = match metrics {
                None => None,
                Some(path) => {
                    let records = read_metrics(&path)?;
                    let m = records
                        .iter()
                        .find(|m| m.step == stats.step)
                        .ok_or_else(|| Error::Invalid(format!("no metrics record for step {}", stats.step)))?;
                    Some(m.advantages == stats.advantages && m.group_sizes == stats.group_sizes && m.num_steps == stats.steps)
                }
            };
            serde_json::to_writer(&mut *out, &StatsReport { stats, matches_metrics })?;
            writeln!(out)?;
        }
    }
    Ok(())
}

/// Parses `args` (program name first) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let stdout = std::io::stdout();
    match execute(cli, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => 1,
                _ => 2,
            }
        }
    }
}
