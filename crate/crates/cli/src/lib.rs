//! `reservoir` command-line tool.
//!
//! Each subcommand runs one experiment and writes a table (CSV or JSON) or a
//! line chart (SVG). Files are accompanied by `<file>.manifest.json` with the
//! resolved parameters and output checksums.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod svg;
pub mod table;

use std::ffi::OsString;

use clap::Parser;

pub use commands::Cli;
pub use error::{CliError, EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION};

/// Environment variable supplying the default seed.
pub const SEED_ENV: &str = "RESERVOIR_SEED";

/// Parses `argv`, runs the subcommand and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let argv = match config::expand(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
