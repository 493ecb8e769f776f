//! `taylorgan` command-line interface.

// `!(x > 0.0)` style checks reject NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "taylorgan", version, about = "Evolve Taylor-polynomial GAN losses on 2-D Gaussian mixtures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct ConfigArgs {
    /// Experiment configuration (TOML).
    #[arg(short, long)]
    pub config: PathBuf,
    /// Override a configuration key, e.g. `--set search.generations=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Args, Clone)]
pub struct OptionalConfigArgs {
    /// Experiment configuration (TOML); defaults apply without one.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Override a configuration key.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Args, Clone)]
pub struct LossChoice {
    /// Named formulation (minimax, non-saturating, wgan, lsgan, taylor-facades-preset).
    #[arg(long, conflicts_with = "genome")]
    pub preset: Option<String>,
    /// JSON file holding a genome (a bare array or an object with a `genome` field).
    #[arg(long)]
    pub genome: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve a loss triple, then verify the best one against the baseline.
    Evolve {
        #[command(flatten)]
        config: ConfigArgs,
        /// Continue from an existing journal in the output directory.
        #[arg(long)]
        resume: bool,
        /// Skip the full-budget verification runs.
        #[arg(long)]
        no_verify: bool,
    },
    /// Train one formulation for the full budget and score it.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        loss: LossChoice,
        /// Generator updates (defaults to `budget.full_steps`).
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Compare two run sets: means, standard deviations and one-tailed Welch p-values.
    Compare {
        /// Run-set files, a verification report, or journals.
        #[arg(required = true, num_args = 1..=2)]
        inputs: Vec<PathBuf>,
        /// Labels for the two sides, comma separated.
        #[arg(long, value_delimiter = ',', num_args = 2, value_name = "A,B")]
        labels: Option<Vec<String>>,
    },
    /// Tabulate and plot the three loss components and their derivatives.
    Losscurve {
        #[command(flatten)]
        config: OptionalConfigArgs,
        #[command(flatten)]
        loss: LossChoice,
        /// Lower end of the score range.
        #[arg(long, allow_hyphen_values = true)]
        from: Option<f64>,
        /// Upper end of the score range.
        #[arg(long, allow_hyphen_values = true)]
        to: Option<f64>,
        #[arg(long, default_value_t = 201)]
        points: usize,
        /// Base name of the output files.
        #[arg(long, default_value = "losscurve")]
        name: String,
    },
    /// Run CMA-ES or the GA on a benchmark function.
    BenchSearch {
        #[command(flatten)]
        config: OptionalConfigArgs,
        /// cmaes or ga.
        #[arg(long, default_value = "cmaes")]
        algorithm: String,
        /// sphere, rosenbrock or rastrigin.
        #[arg(long, default_value = "sphere")]
        function: String,
        #[arg(long, default_value_t = 12)]
        dim: usize,
        #[arg(long, default_value_t = 300)]
        generations: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Every coordinate of the starting point.
        #[arg(long, default_value_t = 5.0, allow_hyphen_values = true)]
        start: f64,
        /// CMA-ES initial step size (overrides the configuration).
        #[arg(long)]
        sigma0: Option<f64>,
    },
}

/// Usage and configuration problems exit with 1, runtime failures with 2.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

impl From<taylorgan::Error> for Failure {
    fn from(e: taylorgan::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

pub fn usage(msg: impl std::fmt::Display) -> Failure {
    Failure::Usage(msg.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Evolve { config, resume, no_verify } => commands::evolve(&config, resume, no_verify),
        Command::Train { config, loss, steps } => commands::train(&config, &loss, steps),
        Command::Compare { inputs, labels } => commands::compare(&inputs, labels),
        Command::Losscurve { config, loss, from, to, points, name } => {
            commands::losscurve(&config, &loss, from, to, points, &name)
        }
        Command::BenchSearch { config, algorithm, function, dim, generations, seed, start, sigma0 } => {
            commands::bench_search(&config, &algorithm, &function, dim, generations, seed, start, sigma0)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
