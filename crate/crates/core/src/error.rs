use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Every sample fell into one histogram bin, so no split exists.
    #[error("degenerate distribution: all {count} values are identical")]
    DegenerateDistribution { count: usize },

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("insufficient flow: {usable} usable vectors, need at least {required}")]
    InsufficientFlow { usable: usize, required: usize },

    /// Flow lines are close to parallel and do not pin down an intersection.
    #[error("degenerate geometry: normal matrix condition number {condition:.3e}")]
    DegenerateGeometry { condition: f64 },

    #[error("force magnitude {magnitude:.3e} too small to define a heading")]
    NoDirection { magnitude: f64 },

    #[error("alignment error: {frames} frames but {records} control records ({detail})")]
    Alignment {
        frames: usize,
        records: usize,
        detail: String,
    },

    #[error("config error on line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
