use clap::Parser;
use std::process::ExitCode;

fn main() -> ExitCode {
    let cli = mpising::cli::Cli::parse();
    ExitCode::from(mpising::cli::run(cli))
}
