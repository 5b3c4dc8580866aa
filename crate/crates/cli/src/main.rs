use std::process::ExitCode;

use clap::Parser;

use qut_core::QutError;

mod args;
mod commands;
mod data;

use args::{resolve, Cli, Command, Resolve};

/// Failure with the process exit code it maps to: 2 for input and usage
/// problems, 3 for responses outside the domain, 4 for refit failures.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }
}

impl From<QutError> for CliError {
    fn from(e: QutError) -> Self {
        let code = match e {
            QutError::OutsideDomain | QutError::QuantileInfinite { .. } | QutError::NonExistent(_) => 3,
            QutError::Dimension(_)
            | QutError::InvalidInput(_)
            | QutError::IncompatiblePenalty(_)
            | QutError::TooManyColumns { .. }
            | QutError::Io(_) => 2,
            _ => 1,
        };
        Self { code, message: e.to_string() }
    }
}

fn with_workers<T: Resolve + Send>(args: T, run: impl FnOnce(T) -> Result<(), CliError> + Send) -> Result<(), CliError> {
    let args = resolve(args)?;
    match args.run().workers {
        Some(0) => Err(CliError::usage("--workers must be positive")),
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| CliError { code: 1, message: format!("cannot start worker pool: {e}") })?
            .install(|| run(args)),
        None => run(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Qut(a) => with_workers(a, commands::cmd_qut),
        Command::Fit(a) => with_workers(a, commands::cmd_fit),
        Command::Simulate(a) => with_workers(a, commands::cmd_simulate),
        Command::Phase(a) => with_workers(a, commands::cmd_phase),
        Command::Variance(a) => with_workers(a, commands::cmd_variance),
        Command::Sensitivity(a) => with_workers(a, commands::cmd_sensitivity),
        Command::Holdout(a) => with_workers(a, commands::cmd_holdout),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
