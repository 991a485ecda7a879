//! Command-line driver: corpus generation, surrogate training, design
//! optimization, verification, rendering and parameter sweeps.

pub mod commands;
pub mod config;

use std::ffi::OsString;

use clap::Parser;

pub use commands::Cli;
pub use config::RunConfig;

/// Parses `args`, runs the subcommand and returns the process exit code:
/// 0 on success, 2 on usage errors, 1 when a module fails.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => 0,
        Err(e) if e.is::<commands::UsageError>() => {
            eprintln!("error: {e:#}");
            2
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
