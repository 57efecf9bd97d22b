use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    quant_cli::run(&quant_cli::Cli::parse())
}
