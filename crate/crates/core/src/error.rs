use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    /// Var(X^2) = 0, so every barrier constant vanishes.
    #[error("degenerate coordinate distribution {0}: Var(X^2) = 0")]
    DegenerateDistribution(String),

    #[error("dataset is unlabeled")]
    Unlabeled,

    #[error("tensorized design already spans the symmetric matrices (rank {rank} = {dim})")]
    NoNullDirection { rank: usize, dim: usize },

    #[error("ill-posed: tensorized design has rank {rank} < {dim}")]
    IllPosed { rank: usize, dim: usize },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("internal contract violated: {0}")]
    Contract(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize, context: &'static str) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch {
            expected,
            got,
            context,
        });
    }
    Ok(())
}
