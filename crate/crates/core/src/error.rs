use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the reconstruction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("no valid slices: {0}")]
    NoValidSlices(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("NIfTI bad magic at offset {offset}: found {found:?}")]
    BadMagic { offset: usize, found: [u8; 4] },

    #[error("NIfTI file is big-endian; only little-endian files are supported")]
    BigEndian,

    #[error("NIfTI unsupported datatype code {code} (field at offset {offset})")]
    UnsupportedDatatype { code: i16, offset: usize },

    #[error("NIfTI truncated: expected {expected} bytes at offset {offset}, found {found}")]
    Truncated {
        offset: usize,
        expected: usize,
        found: usize,
    },

    #[error("NIfTI header invalid: {0}")]
    BadHeader(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("missing input file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error in {}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
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

    /// True for errors caused by the environment (files, formats) rather than
    /// by inconsistent parameters.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Csv { .. }
                | Error::BadMagic { .. }
                | Error::BigEndian
                | Error::UnsupportedDatatype { .. }
                | Error::Truncated { .. }
                | Error::BadHeader(_)
                | Error::Parse { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Non-fatal conditions reported alongside results.
#[derive(Debug, Clone, PartialEq)]
pub enum Warning {
    /// Every pixel of the slice maps outside the reconstruction grid.
    SliceOutsideGrid { slice: usize },
    /// Slice pixel spacing is coarser than the PSF support, leaving gaps.
    SparseSampling { slice: usize },
    /// Gradient iteration stopped because the objective rose repeatedly.
    Diverged { iteration: usize },
    /// CG produced an objective increase (round-off); previous iterate kept.
    NonMonotone { iteration: usize },
    /// Registration could not find a credible alignment.
    RegistrationFailed { score: f64 },
    /// A slice kept its packet pose instead of an individual refinement.
    SliceFallback { slice: usize },
    /// A timepoint had no slices and was copied from a neighbour.
    EmptyTimepoint { timepoint: usize, source: usize },
}

impl std::fmt::Display for Warning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Warning::SliceOutsideGrid { slice } => {
                write!(f, "slice {slice} lies entirely outside the grid")
            }
            Warning::SparseSampling { slice } => {
                write!(f, "slice {slice} pixel spacing exceeds PSF support")
            }
            Warning::Diverged { iteration } => {
                write!(f, "objective increased 3 times in a row at iteration {iteration}")
            }
            Warning::NonMonotone { iteration } => {
                write!(f, "objective increased at CG iteration {iteration}; stopped")
            }
            Warning::RegistrationFailed { score } => {
                write!(f, "registration unreliable (score {score:.4}); identity returned")
            }
            Warning::SliceFallback { slice } => {
                write!(f, "slice {slice} kept its packet pose")
            }
            Warning::EmptyTimepoint { timepoint, source } => {
                write!(f, "timepoint {timepoint} had no slices; copied from {source}")
            }
        }
    }
}
