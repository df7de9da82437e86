use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    ExitCode::from(h2mm_cli::run(h2mm_cli::Cli::parse()))
}
