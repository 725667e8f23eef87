use std::path::PathBuf;

use crate::manifold::SpdMatrix;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised across the crate.
///
/// Variants fall into four families (validation, numerical
/// non-convergence, dataset/model format, I/O) which the CLI maps onto exit
/// codes through [`Error::kind`].
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not symmetric (relative asymmetry {asymmetry:.3e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix is not positive definite (smallest eigenvalue {min_eigenvalue:.3e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("Karcher mean did not converge after {iterations} iterations (residual {residual:.3e})")]
    MeanNonConvergence {
        iterations: usize,
        residual: f64,
        last: Box<SpdMatrix>,
    },

    #[error("fixed-point covariance did not converge after {iterations} iterations (relative change {change:.3e})")]
    FixedPointNonConvergence {
        iterations: usize,
        change: f64,
        last: Box<nalgebra::DMatrix<f64>>,
    },

    #[error("class {class}: {source}")]
    Class {
        class: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("sample {index} has inter-channel energy {energy:.3e}, below the degeneracy threshold")]
    DegenerateSample { index: usize, energy: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("filter design failed: {0}")]
    FilterDesign(String),

    #[error("malformed manifest {path}: {reason}")]
    MalformedManifest { path: PathBuf, reason: String },

    #[error("unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("payload {path} holds {found} values, manifest implies {expected}")]
    ShapeMismatch {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("missing payload file {0}")]
    MissingPayload(PathBuf),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse error family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    NonConvergence,
    Io,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::MeanNonConvergence { .. } | Error::FixedPointNonConvergence { .. } => {
                ErrorKind::NonConvergence
            }
            Error::Numerical(_) => ErrorKind::NonConvergence,
            Error::Class { source, .. } => source.kind(),
            Error::MalformedManifest { .. }
            | Error::UnsupportedVersion { .. }
            | Error::ShapeMismatch { .. }
            | Error::MissingPayload(_)
            | Error::Io { .. } => ErrorKind::Io,
            _ => ErrorKind::Validation,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
