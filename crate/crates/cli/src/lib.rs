//! Command-line front end: `train`, `sample`, `eval` and `gradcheck`.

pub mod commands;
pub mod config;
pub mod imageio;

use std::ffi::OsString;

use clap::Parser;

/// Parses `args` and runs the command. Exit codes: 0 success, 1 runtime
/// failure, 2 usage error.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match commands::Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
