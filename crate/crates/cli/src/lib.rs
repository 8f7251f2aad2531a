//! Experiment driver behind the `homog` binary: configuration, presets, commands and
//! result records.

pub mod commands;
pub mod config;
pub mod plot;
pub mod presets;
pub mod record;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use commands::{run, Outcome};
pub use config::ExperimentConfig;
pub use record::{ErrorRecord, ResultRecord, SCHEMA_VERSION};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    SolveObstacle,
    DensityCurve,
    Effective,
    Flatness,
    Validate,
    CheckProperties,
    CheckEllipticity,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::SolveObstacle,
        Command::DensityCurve,
        Command::Effective,
        Command::Flatness,
        Command::Validate,
        Command::CheckProperties,
        Command::CheckEllipticity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::SolveObstacle => "solve-obstacle",
            Command::DensityCurve => "density-curve",
            Command::Effective => "effective",
            Command::Flatness => "flatness",
            Command::Validate => "validate",
            Command::CheckProperties => "check-properties",
            Command::CheckEllipticity => "check-ellipticity",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] homog::Error),
    #[error("i/o error: {0}")]
    Io(String),
}

/// Process exit codes.
pub mod exit {
    pub const PASS: i32 = 0;
    pub const PROPERTY_VIOLATION: i32 = 1;
    pub const CONFIG_ERROR: i32 = 2;
    pub const NONCONVERGENCE: i32 = 3;
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_nonconvergence() => exit::NONCONVERGENCE,
            // a failed bracket endpoint is a violated property of the operator, not bad input
            CliError::Core(e) if matches!(e.root(), homog::Error::Bracket(_)) => {
                exit::PROPERTY_VIOLATION
            }
            _ => exit::CONFIG_ERROR,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            exit::NONCONVERGENCE => "nonconvergence",
            exit::PROPERTY_VIOLATION => "property_violation",
            _ => "config_error",
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
