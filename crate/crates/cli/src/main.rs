//! `evae` command line: train, eval, lab and sample.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or file
//! format error, 3 numeric failure.

mod args;
mod commands;
mod output;

use std::fmt;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command, LabCommand};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Lib(evae::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use evae::Error as E;
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Lib(e) => match e {
                E::Config(_) | E::Validation(_) | E::Dimension(_) | E::Domain(_) | E::Contract(_) => 1,
                E::Format { .. } | E::Io(_) => 2,
                E::Numeric(_) | E::SupportViolation(_) => 3,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Lib(e) => e.fmt(f),
        }
    }
}

impl From<evae::Error> for CliError {
    fn from(e: evae::Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Lib(e.into())
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Train(a) => commands::train_cmd(a),
        Command::Eval(a) => commands::eval_cmd(a),
        Command::Sample(a) => commands::sample_cmd(a),
        Command::Lab(lab) => match lab {
            LabCommand::Ik(a) => commands::lab_ik(a),
            LabCommand::Lemma1(a) => commands::lab_lemma1(a),
            LabCommand::Tm(a) => commands::lab_tm(a),
            LabCommand::Bound(a) => commands::lab_bound(a),
        },
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let default_level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(default_level)).init();

    match std::panic::catch_unwind(move || run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            output::mark_failure(&e.to_string());
            ExitCode::from(e.exit_code())
        }
        Err(_) => {
            output::mark_failure("internal panic");
            ExitCode::from(3)
        }
    }
}
