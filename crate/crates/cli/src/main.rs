//! `mfjm`: simulate data, estimate MFPC bases, fit joint models and run
//! simulation studies from the command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "mfjm", version, about = "Bayesian joint models with multivariate functional principal components")]
struct Cli {
    /// Settings file (TOML or JSON); flags given on the command line win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a dataset from a scenario.
    Simulate(SimulateArgs),
    /// Estimate a multivariate functional principal component basis.
    Mfpca(MfpcaArgs),
    /// Fit a joint model (posterior mode, then MCMC).
    Fit(FitArgs),
    /// Compare a fitted model with the simulation truth.
    Evaluate(EvaluateArgs),
    /// Simulate, fit and evaluate independent replicates.
    ReplicateStudy(StudyArgs),
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateArgs {
    /// Scenario: `I`, `II`, or a scenario file (TOML or JSON).
    #[arg(long)]
    pub scenario: Option<String>,
    /// Number of subjects.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Keep only these markers (one-based, comma separated).
    #[arg(long, value_delimiter = ',')]
    pub markers: Option<Vec<usize>>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfpcaArgs {
    /// Directory with `survival.csv` and `longitudinal.csv`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Model specification whose parametric mean terms are removed before
    /// the FPCA; defaults to intercept and linear time.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Proportion of variance explained for the multivariate truncation.
    #[arg(long)]
    pub pve: Option<f64>,
    /// Fixed number of components; overrides `pve`.
    #[arg(long)]
    pub components: Option<usize>,
    /// Proportion of variance explained per marker.
    #[arg(long)]
    pub univariate_pve: Option<f64>,
    /// `unit` or `inverse-variance`.
    #[arg(long)]
    pub weights: Option<String>,
    #[arg(long)]
    pub grid_points: Option<usize>,
    #[arg(long)]
    pub marginal_basis_size: Option<usize>,
    /// Drop subjects without late observations before estimation.
    #[arg(long)]
    pub trim: Option<bool>,
    /// Output basis file (JSON).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Basis file; estimated from the data when absent.
    #[arg(long)]
    pub basis: Option<PathBuf>,
    /// Model specification (TOML or JSON); defaults to a smooth baseline,
    /// intercepts and random effects in every mean.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub burnin: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Maximum number of posterior-mode cycles.
    #[arg(long)]
    pub max_cycles: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Directory written by `fit`.
    #[arg(long)]
    pub fit: Option<PathBuf>,
    /// `truth.json` written by `simulate`.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Number of times for the time-resolved metrics.
    #[arg(long)]
    pub time_points: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyArgs {
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub markers: Option<Vec<usize>>,
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Replicate `r` uses seed `seed + r`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// `true`, `estimate` or `truncate:<pve>`.
    #[arg(long)]
    pub basis: Option<String>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub burnin: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub max_cycles: Option<usize>,
    #[arg(long)]
    pub time_points: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let config = cli.config.as_deref();
    let result = match &cli.command {
        Command::Simulate(a) => config::merge(a, config, "simulate").and_then(|a| commands::simulate(&a)),
        Command::Mfpca(a) => config::merge(a, config, "mfpca").and_then(|a| commands::mfpca(&a)),
        Command::Fit(a) => config::merge(a, config, "fit").and_then(|a| commands::fit(&a)),
        Command::Evaluate(a) => config::merge(a, config, "evaluate").and_then(|a| commands::evaluate(&a)),
        Command::ReplicateStudy(a) => {
            config::merge(a, config, "replicate-study").and_then(|a| commands::replicate_study(&a))
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
