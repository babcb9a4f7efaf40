//! Command-line entry point.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::agent::{AgentConfig, Zorl};
use crate::env::make_env;
use crate::harness::{format_summary, run_matrix, summarize_dir, HarnessError, RunConfig};
use crate::solver::{scopt_solve, ExtendedModel, SolveOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUN_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "zorl",
    version,
    about = "Adaptive-discretization average-reward RL experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every (env, algo, seed) triple of a TOML config and write CSVs.
    Run {
        /// Experiment config file.
        #[arg(long)]
        config: PathBuf,
        /// Output directory for per-run CSVs, merged.csv and summary.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve a JSON extended model and print the policy and its index.
    Solve {
        /// JSON file with `actions`, `span_bound`, `gamma`, `floor`.
        #[arg(long)]
        model: PathBuf,
        /// Accuracy of the value iteration.
        #[arg(long, default_value_t = 1e-6)]
        epsilon: f64,
        /// Use the certified stopping rule instead of the plain span rule.
        #[arg(long)]
        certified: bool,
    },
    /// Run ZoRL on one environment and print the final active partition.
    DumpTree {
        #[arg(long, default_value = "riverswim")]
        env: String,
        #[arg(long, default_value_t = 2000)]
        horizon: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Optional TOML file with ZoRL hyperparameters (same keys as the `[zorl]` table).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Summarize final cumulative rewards of the CSVs in a directory.
    Summarize {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

#[derive(Serialize)]
struct SolveReport {
    index: f64,
    gain_bounds: (f64, f64),
    policy: Vec<usize>,
    bias: Vec<f64>,
    iterations: u64,
    fallback_states: Vec<usize>,
}

fn config_error(msg: impl std::fmt::Display) -> i32 {
    eprintln!("error: {msg}");
    EXIT_CONFIG
}

fn run_failure(msg: impl std::fmt::Display) -> i32 {
    eprintln!("error: {msg}");
    EXIT_RUN_FAILURE
}

fn harness_error(e: HarnessError) -> i32 {
    match e {
        HarnessError::Config(_) => config_error(e),
        _ => run_failure(e),
    }
}

pub fn execute(cli: Cli) -> i32 {
    match cli.command {
        Command::Run { config, out } => {
            let cfg = match RunConfig::load(&config) {
                Ok(c) => c,
                Err(e) => return harness_error(e),
            };
            match run_matrix(&cfg, &out) {
                Ok(report) => {
                    print!("{}", format_summary(&report.summary));
                    if report.failed() > 0 {
                        run_failure(format!("{} run(s) failed", report.failed()))
                    } else {
                        EXIT_OK
                    }
                }
                Err(e) => harness_error(e),
            }
        }
        Command::Solve {
            model,
            epsilon,
            certified,
        } => {
            let text = match fs::read_to_string(&model) {
                Ok(t) => t,
                Err(e) => return config_error(format!("cannot read {}: {e}", model.display())),
            };
            let m: ExtendedModel = match serde_json::from_str(&text) {
                Ok(m) => m,
                Err(e) => return config_error(format!("{}: {e}", model.display())),
            };
            let mut opts = SolveOptions::new(epsilon);
            if certified {
                opts = opts.certified();
            }
            match scopt_solve(&m, &opts) {
                Ok(sol) => {
                    let report = SolveReport {
                        index: sol.policy.index,
                        gain_bounds: sol.gain_bounds,
                        policy: sol.policy.choice,
                        bias: sol.bias,
                        iterations: sol.iterations,
                        fallback_states: sol.fallback_states,
                    };
                    println!(
                        "{}",
                        serde_json::to_string_pretty(&report).expect("serializable")
                    );
                    EXIT_OK
                }
                Err(e) => run_failure(e),
            }
        }
        Command::DumpTree {
            env,
            horizon,
            seed,
            config,
        } => {
            let mut cfg = match config {
                Some(path) => match fs::read_to_string(&path) {
                    Ok(text) => match toml::from_str::<AgentConfig>(&text) {
                        Ok(c) => c,
                        Err(e) => return config_error(format!("{}: {e}", path.display())),
                    },
                    Err(e) => return config_error(format!("cannot read {}: {e}", path.display())),
                },
                None => AgentConfig::default(),
            };
            cfg.horizon = horizon;
            cfg.seed = seed;
            let spec = match make_env(&env) {
                Ok(s) => s,
                Err(e) => return config_error(e),
            };
            let mut agent = match Zorl::new(spec, cfg) {
                Ok(a) => a,
                Err(e) => return config_error(e),
            };
            let result = agent.run();
            print!("{}", agent.tree.dump());
            match result {
                Ok(_) => EXIT_OK,
                Err(f) => run_failure(f),
            }
        }
        Command::Summarize { input } => match summarize_dir(&input) {
            Ok(rows) => {
                print!("{}", format_summary(&rows));
                EXIT_OK
            }
            Err(e) => harness_error(e),
        },
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(cli),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            code
        }
    }
}
