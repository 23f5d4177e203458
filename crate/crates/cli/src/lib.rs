//! Command-line front end for `coxpsw`: `analyze`, `simulate` and `true-hr`.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::Path;

use args::{Cli, Command};
use config::{AnalyzeConfig, Shared, SimulateConfig, TrueHrConfig};
use error::{CliError, Result};

fn with_threads<T: Send>(shared: &Shared, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match shared.threads {
        None => f(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(format!("cannot start {n} threads: {e}")))?
            .install(f),
    }
}

fn refuse_overwriting_input(out: Option<&Path>, input: &Path) -> Result<()> {
    let same = match (
        out.and_then(|o| o.canonicalize().ok()),
        input.canonicalize().ok(),
    ) {
        (Some(a), Some(b)) => a == b,
        _ => false,
    };
    if same {
        return Err(CliError::Config("--out must not be the input file".into()));
    }
    Ok(())
}

/// Runs a parsed command, writing its report to `--out` or stdout.
pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Analyze(args) => {
            let c = AnalyzeConfig::resolve(&args)?;
            refuse_overwriting_input(c.shared.out.as_deref(), &c.input)?;
            let out = with_threads(&c.shared, || commands::analyze(&c))?;
            let text = output::render(c.shared.format, &out.table(), &out);
            output::emit(&text, c.shared.out.as_deref())
        }
        Command::Simulate(args) => {
            let c = SimulateConfig::resolve(&args)?;
            let out = with_threads(&c.shared, || commands::simulate(&c))?;
            let text = output::render(c.shared.format, &out.table(), &out);
            output::emit(&text, c.shared.out.as_deref())
        }
        Command::TrueHr(args) => {
            let c = TrueHrConfig::resolve(&args)?;
            let rows = with_threads(&c.shared, || commands::true_hr(&c))?;
            let text = output::render(c.shared.format, &commands::truth_table(&rows), &rows);
            output::emit(&text, c.shared.out.as_deref())
        }
    }
}
