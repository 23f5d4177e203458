use clap::Parser;
use coxpsw_cli::args::Cli;

fn main() {
    let cli = Cli::parse();
    if let Err(e) = coxpsw_cli::execute(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
