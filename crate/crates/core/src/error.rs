use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = GpccaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GpccaError {
    /// Malformed or out-of-range input (shapes, masks, hyperparameters).
    #[error("{0}")]
    Invalid(String),

    /// A covariance block failed its Cholesky factorization.
    #[error("covariance degenerate: {0}")]
    Degenerate(String),

    /// The accumulated latent second-moment matrix could not be inverted.
    #[error("singular latent moment matrix: {0}")]
    Singular(String),

    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<GpccaError>,
    },

    #[error("{}{}: {message}", path.display(), line.map(|l| format!(":{l}")).unwrap_or_default())]
    Parse {
        path: PathBuf,
        line: Option<usize>,
        message: String,
    },

    #[error("{path}: {source}", path = path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl GpccaError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        GpccaError::Invalid(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        GpccaError::Degenerate(msg.into())
    }

    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        GpccaError::AtIteration {
            iteration,
            source: Box::new(self),
        }
    }

    /// True for failures caused by the numerics rather than by the input.
    pub fn is_numerical(&self) -> bool {
        match self {
            GpccaError::Degenerate(_) | GpccaError::Singular(_) => true,
            GpccaError::AtIteration { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
