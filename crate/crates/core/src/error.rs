use std::path::PathBuf;

use thiserror::Error;

use crate::geometry::Srvf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used for process exit codes and FFI status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad input data, file contents or configuration.
    Data,
    /// A numerical procedure failed (divergence, non-convergence).
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate curve{}: all inter-frame displacements vanish", fmt_context(.context))]
    DegenerateCurve { context: Option<String> },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("point is antipodal to the reference (distance {distance:.9}); log map undefined")]
    AntipodalPoint { distance: f64 },

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("karcher mean of an empty set")]
    EmptySet,

    #[error("karcher mean did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence {
        best: Box<Srvf>,
        residual: f64,
        iterations: usize,
    },

    #[error("parse error at {context}: {message}")]
    Parse { context: String, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("sequence too short: {frames} frame(s), need at least 2")]
    TooShort { frames: usize },

    #[error("missing classes: {}", .0.join(", "))]
    MissingClass(Vec<String>),

    #[error("invalid synthetic corpus spec: {0}")]
    InvalidSpec(String),

    #[error("tensor is not part of the differentiable graph")]
    NotInGraph,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite loss at iteration {iteration} ({what})")]
    NonFiniteLoss { iteration: usize, what: String },

    #[error("unsupported format version: {0}")]
    VersionMismatch(String),

    #[error("corrupt file {path}: {reason}")]
    CorruptFile { path: PathBuf, reason: String },

    #[error("landmark outside the heatmap canvas: frame {frame}, landmark {landmark} at ({x}, {y})")]
    OutOfBounds {
        frame: usize,
        landmark: usize,
        x: f64,
        y: f64,
    },

    #[error("class separation needs at least two classes")]
    SingleClass,

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn fmt_context(context: &Option<String>) -> String {
    match context {
        Some(c) => format!(" ({c})"),
        None => String::new(),
    }
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::NoConvergence { .. } | Error::NonFiniteLoss { .. } => ErrorClass::Numerical,
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
