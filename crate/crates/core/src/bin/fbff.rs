use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use fbff::harness::{self, HarnessError, RunConfig, CARTPOLE_SUCCESS};
use fbff::policy::EvalMode;

#[derive(Parser)]
#[command(
    version,
    about = "Train and evaluate feedback/feedforward mixture policies"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one seed.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Print one line per episode.
        #[arg(long)]
        verbose: bool,
    },
    /// Deterministic rollout of a checkpoint.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// composed, fb or ff; defaults to the config's eval-mode.
        #[arg(long)]
        mode: Option<EvalMode>,
        /// Apply the config's sensing-failure region.
        #[arg(long)]
        failure: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train several seeds and partition them by final score.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated seeds or a range `a..b`.
        #[arg(long, default_value = "0..10")]
        seeds: String,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        #[arg(long, default_value_t = CARTPOLE_SUCCESS)]
        threshold: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate run directories into quantile curves for plotting.
    PlotData {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = CARTPOLE_SUCCESS)]
        threshold: f64,
    },
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().context("range start")?;
        let b: u64 = b.trim().parse().context("range end")?;
        return Ok((a..b).collect());
    }
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse().with_context(|| format!("bad seed {t:?}")))
        .collect()
}

fn load(config: &Path) -> Result<RunConfig> {
    RunConfig::load(config).with_context(|| format!("loading {}", config.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Train {
            config,
            seed,
            out,
            episodes,
            verbose,
        } => {
            let mut cfg = load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            if let Some(n) = episodes {
                cfg.episodes = n;
            }
            let outcome = harness::run_train_with(&cfg, |row, _| {
                if verbose {
                    println!(
                        "episode {:4} score {:8.2} w {:.3} d {:.3} H_fb {:7.3} H_ff {:7.3}",
                        row.episode,
                        row.score,
                        row.mean_w,
                        row.mean_d,
                        row.mean_h_fb,
                        row.mean_h_ff
                    );
                }
            })?;
            println!("{}", serde_json::to_string_pretty(&outcome.summary)?);
        }
        Cmd::Eval {
            config,
            checkpoint,
            mode,
            failure,
            out,
        } => {
            let cfg = load(&config)?;
            let out = out.unwrap_or_else(|| cfg.out_dir.clone());
            let (report, traj) = harness::run_eval(
                &cfg,
                &checkpoint,
                mode.unwrap_or(cfg.eval_mode),
                failure,
                &out,
            )?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            eprintln!("trajectory written to {}", traj.display());
        }
        Cmd::Sweep {
            config,
            seeds,
            threads,
            threshold,
            out,
        } => {
            let mut cfg = load(&config)?;
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            let seeds = parse_seeds(&seeds)?;
            let summary = harness::run_sweep(&cfg, &seeds, threads, threshold)?;
            println!(
                "{} runs: {} success {:?}, {} failure {:?}",
                summary.runs.len(),
                summary.success.len(),
                summary.success,
                summary.failure.len(),
                summary.failure
            );
            if !summary.aborted.is_empty() {
                bail!(
                    "{} seeds aborted on non-finite values",
                    summary.aborted.len()
                );
            }
        }
        Cmd::PlotData {
            runs,
            out,
            threshold,
        } => {
            let summary = harness::plot_data(&runs, threshold, &out)?;
            println!(
                "{} runs aggregated into {}",
                summary.runs.len(),
                out.join("curves.csv").display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if matches!(
                e.downcast_ref::<HarnessError>(),
                Some(HarnessError::Diverged { .. })
            ) {
                ExitCode::from(3)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
