use std::process::ExitCode;

use clap::Parser;
use polar_qhd::cli::{exit_code, outcome_code, run, Cli, Outcome};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcome) => {
            if let Outcome::Violation(msg) = &outcome {
                eprintln!("violation: {msg}");
            }
            ExitCode::from(outcome_code(&outcome))
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
