use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("empty mesh")]
    EmptyMesh,
    #[error("direction is not unit length (norm {0})")]
    NonUnitDirection(f64),
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("window needs at least {needed} frames, got {got}")]
    WindowTooShort { needed: usize, got: usize },
    #[error("skin weight row {row} sums to {sum}, expected 1")]
    SkinWeights { row: usize, sum: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("need at least {needed} correspondences, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("inconsistent peak counts: {0}")]
    PeakMismatch(String),
    #[error("schema mismatch in {file}: field `{field}`: {reason}")]
    Schema { file: String, field: String, reason: String },
    #[error("unsupported schema version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("parse error in {file}: {reason}")]
    Parse { file: String, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Short machine-readable tag used on the command line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::InvalidInput(_) => "invalid_input",
            Error::EmptyMesh => "empty_mesh",
            Error::NonUnitDirection(_) => "non_unit_direction",
            Error::Degenerate(_) => "degenerate",
            Error::WindowTooShort { .. } => "window_too_short",
            Error::SkinWeights { .. } => "skin_weights",
            Error::NonFinite(_) => "non_finite",
            Error::TooFewPoints { .. } => "too_few_points",
            Error::PeakMismatch(_) => "peak_mismatch",
            Error::Schema { .. } => "schema",
            Error::Version { .. } => "version",
            Error::MissingFile(_) => "missing_file",
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
