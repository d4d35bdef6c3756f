use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    /// The predictive density at the observation is numerically zero, so the
    /// logarithmic score would be infinite.
    #[error("score overflow: predictive density is numerically zero at y = {y}")]
    ScoreOverflow { y: f64 },

    #[error("row {row}: {source}")]
    Row { row: usize, source: Box<Error> },

    #[error("loss is not finite at the starting point")]
    NonFiniteStart,

    #[error(
        "optimizer did not converge after {iterations} iterations (gradient norm {grad_norm:e})"
    )]
    NoConvergence { iterations: usize, grad_norm: f64 },

    #[error(
        "line search failed at iteration {iteration}: loss {loss}, gradient norm {grad_norm:e}, \
         directional derivative {slope:e}"
    )]
    LineSearch {
        iteration: usize,
        loss: f64,
        grad_norm: f64,
        slope: f64,
    },

    #[error("boosting failed at iteration {iteration}: {source}")]
    Boosting {
        iteration: usize,
        source: Box<Error>,
    },

    #[error("invalid model specification: {0}")]
    Spec(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn at_row(self, row: usize) -> Self {
        Error::Row {
            row,
            source: Box::new(self),
        }
    }

    /// True for failures of the numerics (overflow, non-convergence) as
    /// opposed to bad input or I/O.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::ScoreOverflow { .. }
            | Error::NonFiniteStart
            | Error::NoConvergence { .. }
            | Error::LineSearch { .. }
            | Error::Boosting { .. } => true,
            Error::Row { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
