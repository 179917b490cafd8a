use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the command-line layer, each with its exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error(transparent)]
    Model(#[from] lrssm_core::Error),
    #[error("{failed} of {total} replicates failed")]
    PartialStudy { failed: usize, total: usize },
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        CliError::Format { path: path.into(), msg: msg.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    /// 2 for bad input, 3 for numerical failure, 4 for a partial study.
    pub fn exit_code(&self) -> i32 {
        use lrssm_core::Error as E;
        match self {
            CliError::Config(_) | CliError::Io { .. } | CliError::Format { .. } => 2,
            CliError::Model(e) => match e {
                E::CollinearInput
                | E::DuplicatePoints(..)
                | E::TooFewPoints(_)
                | E::TargetTooSmall { .. }
                | E::PointOutsideMesh { .. }
                | E::InvalidMesh(_)
                | E::NonPositiveKappa(_)
                | E::DimensionTooLarge(_)
                | E::NoObservationsForVariable(_)
                | E::DimensionMismatch(_)
                | E::InvalidParameter(_)
                | E::EmptyPanel => 2,
                _ => 3,
            },
            CliError::PartialStudy { .. } => 4,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
