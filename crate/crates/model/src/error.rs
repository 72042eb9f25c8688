use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Data(#[from] stdn_core::Error),
    #[error(transparent)]
    Nn(#[from] stdn_nn::NnError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}: loss {loss:e} against reference {initial:e}")]
    Divergence { epoch: usize, loss: f64, initial: f64 },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ModelError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ModelError::Io { path: path.into(), source }
    }
}
