//! The `camoguard` command line: corpus generation, training, scoring,
//! deferral sweeps, reports and the review-session HTTP service.

pub mod args;
pub mod artifacts;
pub mod commands;
pub mod error;
pub mod server;

use clap::Parser;

use crate::error::{CliError, Kind};

/// Parses `argv`, runs the command and returns the process exit status.
/// Failures print one JSON line to stderr.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match args::Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let message = e.to_string();
            let first = message
                .lines()
                .next()
                .unwrap_or("usage error")
                .trim_start_matches("error: ");
            let err = CliError::new(Kind::Usage, first);
            eprintln!("{}", err.to_json_line());
            return Kind::Usage.exit_code();
        }
    };
    match commands::run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            e.kind.exit_code()
        }
    }
}
