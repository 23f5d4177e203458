use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

#[derive(Debug, Parser)]
#[command(
    name = "coxpsw",
    version,
    about = "Propensity-score weighted Cox regression"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit weighted Cox models on a CSV cohort, overall and by subgroup.
    Analyze(AnalyzeArgs),
    /// Run the Monte Carlo coverage study.
    Simulate(SimulateArgs),
    /// Approximate the true marginal log hazard ratio of a scenario.
    TrueHr(TrueHrArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Md,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PsScope {
    /// Refit the propensity model within each subgroup.
    Subgroup,
    /// Reuse propensity scores fitted on the full cohort.
    Full,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML file with default values for any flag.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Write to this file instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: available cores).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Column holding follow-up time.
    #[arg(long)]
    pub time: Option<String>,
    /// Column holding the event indicator.
    #[arg(long)]
    pub event: Option<String>,
    /// Column holding the treatment indicator.
    #[arg(long)]
    pub treatment: Option<String>,
    /// Propensity-model covariates, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    /// Comma-separated subset of ate, att, ato.
    #[arg(long, value_delimiter = ',')]
    pub estimand: Option<Vec<String>>,
    /// Subgroup filter such as "age>=70"; repeatable.
    #[arg(long)]
    pub subgroup: Vec<String>,
    #[arg(long, value_enum)]
    pub ps_scope: Option<PsScope>,
    #[arg(long)]
    pub level: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long, value_parser = crate::config::parse_count)]
    pub n: Option<usize>,
    #[arg(long, value_parser = crate::config::parse_count)]
    pub reps: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub estimand: Option<Vec<String>>,
    /// A log hazard ratio, or `compute`.
    #[arg(long)]
    pub true_hr: Option<String>,
    /// Samples used when the truth is computed.
    #[arg(long, value_parser = crate::config::parse_count)]
    pub truth_samples: Option<usize>,
    #[arg(long)]
    pub level: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrueHrArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub estimand: Option<Vec<String>>,
    /// Number of uncensored draws.
    #[arg(long, value_parser = crate::config::parse_count)]
    pub m: Option<usize>,
}
