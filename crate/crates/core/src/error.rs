use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Pipeline stage an error originated from, used by [`crate::estimator::detect`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Transform,
    Features,
    LongRun,
    Cusum,
    Quantiles,
    Estimate,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Transform => "transform",
            Stage::Features => "features",
            Stage::LongRun => "long-run variance",
            Stage::Cusum => "cusum",
            Stage::Quantiles => "quantiles",
            Stage::Estimate => "estimate",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed CSV input. `row` and `column` are 1-based and count the
    /// header line when one is present.
    #[error("{source_name}: row {row}, column {column}: {message}")]
    Parse {
        source_name: String,
        row: usize,
        column: usize,
        message: String,
    },

    #[error("invalid series: {0}")]
    InvalidSeries(String),

    #[error("dimension mismatch: expected {expected} columns, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("grid point {point} is not of the form t/{t_len}")]
    OffGrid { point: f64, t_len: usize },

    #[error("field is already scaled")]
    AlreadyScaled,

    #[error(
        "normalization matrix is numerically singular (condition estimate {cond:.3e}); \
         try a larger smoothing bandwidth"
    )]
    Singular { cond: f64 },

    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    #[error("{stage} stage: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at(stage: Stage) -> impl FnOnce(Error) -> Error {
        move |source| Error::Stage {
            stage,
            source: Box::new(source),
        }
    }

    /// Stage the error was raised in, if it passed through the detection pipeline.
    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}
