//! Command-line front end: `verify`, `train`, `sweep-c`, `export-mdp` and
//! `inspect`. Exit codes are 0 on success, 1 on a failed property or a
//! runtime error, 2 on a usage error.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::envs::{EnvConfig, EnvName};
use crate::error::{Error, Result};
use crate::harness::{self, CValue, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "safe-mbrl",
    version,
    about = "Safe model-based RL with terminal-cost penalties"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a property suite and emit a JSON report.
    Verify {
        /// Suite name, or `all`.
        suite: String,
        /// Existing `train` output for `summary-crosscheck`.
        run_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train every seed of a run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated seeds overriding the config.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        force: bool,
    },
    /// Train once per terminal cost and tabulate the trade-off.
    SweepC {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        force: bool,
        /// `bound`, `<k>xbound` or a number; defaults to the config's `c_values`.
        values: Vec<String>,
    },
    /// Write an environment's exact tabular MDP as JSON.
    ExportMdp {
        /// car-stop or conveyor; overrides the config's env.
        env: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0.99)]
        gamma: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print penalty schedule and network sizes from a checkpoint.
    Inspect { dir: PathBuf },
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => Ok(fs::write(path, text)?),
        None => {
            let mut stdout = io::stdout().lock();
            Ok(writeln!(stdout, "{text}")?)
        }
    }
}

fn with_seeds(mut cfg: RunConfig, seeds: Option<Vec<u64>>) -> Result<RunConfig> {
    if let Some(s) = seeds {
        cfg.seeds = s;
        cfg.validate()?;
    }
    Ok(cfg)
}

/// Executes a parsed command; `Ok(false)` means a property failed.
pub fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Verify {
            suite,
            run_dir,
            seed,
            out,
        } => {
            let report = harness::verify(&suite, seed, run_dir.as_deref())?;
            for r in &report.results {
                eprintln!(
                    "{} {:<22} {}/{} failed  {}",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.name,
                    r.failures,
                    r.trials,
                    r.detail
                );
            }
            emit(&serde_json::to_string_pretty(&report)?, out.as_deref())?;
            Ok(report.passed)
        }
        Command::Train {
            config,
            out,
            seeds,
            force,
        } => {
            let cfg = with_seeds(RunConfig::load(&config)?, seeds)?;
            let result = harness::train(&cfg, &out, force)?;
            let s = &result.summary;
            eprintln!(
                "return {:.4} ± {:.4}, cumulative violations {:.2} ± {:.2} over {} seeds",
                s.final_return.mean,
                s.final_return.std,
                s.cumulative_violations.mean,
                s.cumulative_violations.std,
                s.seeds.len()
            );
            Ok(true)
        }
        Command::SweepC {
            config,
            out,
            seeds,
            force,
            values,
        } => {
            let cfg = with_seeds(RunConfig::load(&config)?, seeds)?;
            let values = if values.is_empty() {
                cfg.c_values.clone()
            } else {
                values
                    .iter()
                    .map(|v| v.parse())
                    .collect::<Result<Vec<CValue>>>()?
            };
            let sweep = harness::sweep_c(&cfg, &values, &out, force)?;
            for row in &sweep.table {
                eprintln!(
                    "C {:<10} {:>10.5}  return {:.4}  violations {:.2}",
                    row.label, row.c, row.final_return_mean, row.cumulative_violations_mean
                );
            }
            Ok(true)
        }
        Command::ExportMdp {
            env,
            config,
            gamma,
            out,
        } => {
            let env_cfg = match (env, config) {
                (Some(name), _) => {
                    let name: EnvName =
                        serde_json::from_value(serde_json::Value::String(name.clone()))
                            .map_err(|_| Error::InvalidArgument(format!("unknown env {name:?}")))?;
                    EnvConfig::named(name)
                }
                (None, Some(path)) => RunConfig::load(&path)?.env,
                (None, None) => {
                    return Err(Error::InvalidArgument(
                        "export-mdp needs an env name or --config".into(),
                    ))
                }
            };
            emit(&harness::export_mdp(&env_cfg, gamma)?, out.as_deref())?;
            Ok(true)
        }
        Command::Inspect { dir } => {
            let info = harness::inspect(&dir)?;
            emit(&serde_json::to_string_pretty(&info)?, None)?;
            Ok(true)
        }
    }
}

/// Parses `args`, runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                EXIT_USAGE
            } else {
                EXIT_FAILURE
            }
        }
    }
}
