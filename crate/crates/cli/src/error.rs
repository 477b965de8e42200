use specpart_core::Error;

use crate::config::ConfigError;

/// Failure classes, each with its own process exit code.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("solver: {0}")]
    Solver(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("diagnostics: {0}")]
    Diagnostics(String),
}

impl CliError {
    /// 2 config, 3 solver, 4 I/O, 5 degenerate diagnostics.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Io(_) => 4,
            CliError::Diagnostics(_) => 5,
        }
    }

    /// Class of a library error raised while solving or partitioning.
    pub fn from_core(e: &Error) -> Self {
        match e {
            Error::EmptyDomain
            | Error::InvalidGeometry(_)
            | Error::MaskFormat(_)
            | Error::TooManyEigenpairs { .. }
            | Error::NonPositiveArgument(_)
            | Error::InvalidCost(_)
            | Error::InvalidSchedule(_) => CliError::Config(e.to_string()),
            Error::DegenerateSample { .. } | Error::InvalidProbe(_) => CliError::Diagnostics(e.to_string()),
            _ => CliError::Solver(e.to_string()),
        }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}
