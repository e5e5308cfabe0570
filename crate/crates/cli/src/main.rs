//! `sgg`: reproducible generate, train, eval and analysis runs.
//!
//! Exit codes: 0 success, 2 invalid input or configuration, 3 numeric
//! failure, 4 I/O failure.

mod args;
mod commands;
mod config;
mod manifest;

use std::fmt;
use std::process::ExitCode;

use clap::Parser;

/// Invalid input detected by the command layer.
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

const EXIT_INVALID: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_IO: u8 = 4;

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<sgg_core::Error>() {
            return match e {
                sgg_core::Error::Numerics(_) | sgg_core::Error::Diverged { .. } => EXIT_NUMERIC,
                sgg_core::Error::Io { .. } => EXIT_IO,
                _ => EXIT_INVALID,
            };
        }
        if let Some(e) = cause.downcast_ref::<csv::Error>() {
            return if e.is_io_error() { EXIT_IO } else { EXIT_INVALID };
        }
        if cause.is::<std::io::Error>() {
            return EXIT_IO;
        }
    }
    EXIT_INVALID
}

fn main() -> ExitCode {
    let cli = args::Cli::parse();
    match commands::run(&cli, std::env::vars().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if matches!(e.downcast_ref::<sgg_core::Error>(), Some(sgg_core::Error::Diverged { .. })) {
                eprintln!("hint: lower lr or set clip_norm");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
