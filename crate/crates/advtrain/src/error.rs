//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Covariance specification failed the positive-definiteness check.
    #[error("covariance is not positive definite (min eigenvalue {min_eigenvalue:.3e})")]
    NotSpd { min_eigenvalue: f64 },

    /// Dimension mismatch between inputs.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The exact attack has no unique maximizer and the model sits at the
    /// non-differentiable point (theta = 0 with a nonzero residual).
    #[error("exact attack undefined at theta = 0 with nonzero residual")]
    AttackUndefined,

    /// The Gram matrix X X^T is numerically singular.
    #[error("X X^T is numerically singular (min eigenvalue {min_eigenvalue:.3e}, condition number {condition:.3e})")]
    SingularGram { min_eigenvalue: f64, condition: f64 },

    /// A 1-D search for the robust optimum did not converge.
    #[error("robust-optimum search did not converge on bracket [{lo:.6e}, {hi:.6e}]")]
    NonConvergence { lo: f64, hi: f64 },

    /// Schedule request outside the regime where the formulas make sense.
    #[error("schedule rejected: {0}")]
    ScheduleRejected(String),

    /// Training loss exceeded the divergence guard or became non-finite.
    /// Carries the per-iteration losses recorded up to the abort.
    #[error("training diverged at iteration {at_iter} (loss {loss:.3e})")]
    Diverged {
        at_iter: usize,
        loss: f64,
        prefix: Vec<f64>,
    },

    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("unknown preset `{0}`; valid presets: {1}")]
    UnknownPreset(String, String),

    #[error("missing expected files in result directory: {0}")]
    MissingResults(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(String),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
