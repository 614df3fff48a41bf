//! Command line front end. Exit codes: 0 all checks pass, 1 configuration
//! or io error, 2 a verification check failed, 3 truncation exceeded budget.

use clap::error::ErrorKind;
use clap::Parser;

mod commands;
mod config;
mod figures;
mod report;

use config::{Cli, CliError};

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(&cli) {
        Ok(outcome) => {
            if outcome.truncation_over {
                eprintln!("truncated replicates exceed the configured budget");
                3
            } else if !outcome.pass {
                2
            } else {
                0
            }
        }
        Err(CliError::Config(m)) => {
            eprintln!("config error: {m}");
            1
        }
        Err(CliError::Io(m)) => {
            eprintln!("io error: {m}");
            1
        }
        Err(CliError::Truncation(m)) => {
            eprintln!("resource limit: {m}");
            3
        }
    }
}

fn main() {
    std::process::exit(run());
}
