//! `ragkit`: ingest, query, train, federate and benchmark from the command line.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

mod commands;

use std::io::Write;
use std::process::ExitCode;

use clap::Parser;

use commands::Cli;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            // stderr may already be closed by the caller
            let _ = writeln!(std::io::stderr(), "error: {err}");
            match err {
                ragkit::Error::MissingTrainer(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
