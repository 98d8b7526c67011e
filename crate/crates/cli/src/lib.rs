//! Batch workflow behind the `secrisk` binary.
//!
//! Each subcommand reads documents from disk (or snapshots from a store),
//! runs the engine, and renders a report. Reports never contain wall-clock
//! values, so a command given the same files prints the same bytes. Snapshot
//! timestamps live only inside the snapshot document and the status line on
//! standard error.

pub mod args;
mod commands;
pub mod exit;

use std::ffi::OsString;

use clap::Parser;

pub use args::Cli;
pub use exit::{CliError, Status};

/// Runs one parsed command.
pub fn run(cli: Cli) -> Result<Status, CliError> {
    commands::dispatch(cli)
}

/// Parses `argv`, runs the command, reports errors on standard error and
/// returns the exit status.
pub fn main_from<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { Status::Usage.code() } else { Status::Success.code() };
        }
    };
    match run(cli) {
        Ok(status) => status.code(),
        Err(e) => {
            eprintln!("secrisk: error: {e}");
            e.status().code()
        }
    }
}
