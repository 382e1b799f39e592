use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix `{0}` is not symmetric positive definite")]
    NotPositiveDefinite(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("innovation covariance is not positive definite at step k={step}")]
    FilterBreakdown { step: usize },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("SVD did not converge")]
    SvdFailure,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("operator `{op}` does not apply to term kind `{kind}`")]
    WrongTermKind { op: &'static str, kind: &'static str },

    #[error("EM iteration {iteration} failed: {source}")]
    EmIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("reference matrix has zero norm")]
    ZeroReference,

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
