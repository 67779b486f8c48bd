//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage, 2 validation failure, 3 numeric or
//! simulation failure, 4 comparison failure.

mod args;
mod commands;
mod output;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Cmd};

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("HYBRIDSENS_THREADS") {
        match threads.parse::<usize>() {
            Ok(n) if n >= 1 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: HYBRIDSENS_THREADS must be a positive integer");
                return ExitCode::from(1);
            }
        }
    }

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    let result = match &cli.command {
        Cmd::Validate(a) => commands::cmd_validate(a),
        Cmd::Reduce(a) => commands::cmd_reduce(a),
        Cmd::Simulate(a) => commands::cmd_simulate(a),
        Cmd::Sens(a) => commands::cmd_sens(a),
        Cmd::Compare(a) => commands::cmd_compare(a),
        Cmd::OracleCme(a) => commands::cmd_oracle_cme(a),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
