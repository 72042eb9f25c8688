use std::path::PathBuf;

use stdn_model::ModelError;
use stdn_nn::NnError;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Divergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Data(_) => EXIT_DATA,
            CliError::Divergence(_) => EXIT_DIVERGENCE,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.into().display()))
    }
}

impl From<stdn_core::Error> for CliError {
    fn from(e: stdn_core::Error) -> Self {
        use stdn_core::Error as E;
        match e {
            E::Config(_) | E::Parameter(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Data(inner) => inner.into(),
            ModelError::Divergence { .. } => CliError::Divergence(e.to_string()),
            ModelError::Io { .. } | ModelError::Nn(NnError::Io { .. } | NnError::Format(_)) => CliError::Data(e.to_string()),
            ModelError::Config(_) | ModelError::Nn(_) => CliError::Config(e.to_string()),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
