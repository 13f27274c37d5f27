use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate curve")]
    DegenerateCurve,

    #[error("invalid curve: {0}")]
    InvalidCurve(String),

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("grid size mismatch: {left} vs {right}")]
    GridMismatch { left: usize, right: usize },

    #[error("non-monotone warping at index {0}")]
    NonMonotoneWarping(usize),

    #[error("density is not normalized (sum = {0})")]
    Unnormalized(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{0}")]
    Format(String),

    #[error("pair ({i}, {j}) failed: {source}")]
    Pair {
        i: usize,
        j: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("empty image")]
    EmptyImage,

    #[error("degenerate contour ({0} boundary pixels)")]
    DegenerateContour(usize),

    #[error("no points")]
    NoPoints,

    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the library itself rather than its inputs.
    pub fn is_internal(&self) -> bool {
        match self {
            Error::Invariant(_) => true,
            Error::Pair { source, .. } => source.is_internal(),
            _ => false,
        }
    }
}
