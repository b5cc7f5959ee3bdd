use std::path::Path;

use lumen_core::LumenError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    /// Automatic `delta` at or below the obstruction threshold.
    #[error("{0}")]
    Obstruction(String),
    #[error(transparent)]
    Core(#[from] LumenError),
}

impl CliError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io { path: path.display().to_string(), message: e.to_string() }
    }

    /// 1 for input and I/O errors, 2 for infeasible problems, 3 when the
    /// solver fails to converge.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Obstruction(_) => 2,
            CliError::Core(e) => match e.root() {
                LumenError::Infeasible { .. } => 2,
                LumenError::NonConvergence { .. }
                | LumenError::FloorHit { .. }
                | LumenError::MinimalityViolation { .. } => 3,
                _ => 1,
            },
            _ => 1,
        }
    }

    /// Stable token leading the stderr line.
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage-error",
            CliError::Config(_) => "config-error",
            CliError::Io { .. } => "io-error",
            CliError::Obstruction(_) => "obstruction",
            CliError::Core(e) => match e.root() {
                LumenError::InvalidArgument(_) => "invalid-argument",
                LumenError::DegenerateDirection(_) => "degenerate-direction",
                LumenError::ConstraintViolated(_) => "constraint-violated",
                LumenError::Numeric { .. } => "numeric-error",
                LumenError::Infeasible { .. } => "infeasible",
                LumenError::NonConvergence { .. } => "non-convergence",
                LumenError::FloorHit { .. } => "floor-hit",
                LumenError::MinimalityViolation { .. } => "minimality-violation",
                LumenError::Level { .. } => unreachable!("root strips level wrappers"),
            },
        }
    }

    /// `error[<code>]: <message>` on one line.
    pub fn line(&self) -> String {
        let msg = self.to_string().replace(['\n', '\r'], " ");
        format!("error[{}]: {msg}", self.code())
    }
}
