//! Command-line front end: synthetic scenes, integration, benchmarks and
//! mesh export. [`run`] parses arguments and returns the process exit code.

pub mod args;
pub mod commands;
pub mod error;
pub mod record;
pub mod scene_dir;

use std::ffi::OsString;

use clap::Parser;

pub use args::{Cli, Command};
pub use error::{CliError, CliResult};
pub use record::RunRecord;

/// Exit codes: 0 success, 1 runtime failure, 2 usage error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(args, false)
}

/// As [`run`]; `quiet` keeps the run log off stdout.
pub fn run_with<I, T>(args: I, quiet: bool) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match commands::execute(&cli.command, quiet) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
