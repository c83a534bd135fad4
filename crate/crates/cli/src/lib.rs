//! Experiment orchestration: configuration files, result tables, and the
//! command verbs behind the `mdis` binary.
//!
//! The binary exposes four verbs:
//!
//! * `constants` — homogenization constants of the rough potential.
//! * `verify-subsolution` — numerical sweep of a study's subsolution.
//! * `run` — one estimation run, echoed and appended to a CSV table.
//! * `table` — a whole comparison table (one row per scaling and method).
//!
//! Exit status: 0 on success, 1 for validation or verification failures,
//! 2 for runtime failures.

pub mod commands;
pub mod config;
pub mod csv;

/// Error split that the process exit code is derived from.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or a failed verification: exit code 1.
    Validation(String),
    /// Simulation or I/O failure: exit code 2.
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(msg) => write!(f, "{msg}"),
            CliError::Runtime(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<mdis_core::experiment::ExperimentError> for CliError {
    fn from(err: mdis_core::experiment::ExperimentError) -> Self {
        use mdis_core::experiment::ExperimentError as E;
        match err {
            E::Sampler(inner) => CliError::Runtime(inner.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::Runtime(err.to_string())
    }
}
