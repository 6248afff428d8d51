use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("targets {first} MHz and {second} MHz resolve to the same grid point")]
    DuplicateSelection { first: f64, second: f64 },
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix is not positive definite (jitter escalated to {max_jitter:e})")]
    NotPositiveDefinite { max_jitter: f64 },
    #[error("normal equations stayed singular at damping {lambda:e}")]
    SingularNormalEquations { lambda: f64 },
    #[error("residual is not finite")]
    NonFiniteResidual,
    #[error("objective is not finite at start point {index}")]
    NonFiniteObjective { index: usize },
    #[error("{points} points cannot determine {params} parameters")]
    UnderDetermined { points: usize, params: usize },
    #[error("fit did not converge after {iterations} iterations")]
    FitDiverged { iterations: usize },
    #[error("could not locate two separated dips")]
    DipDetectionFailed,
    #[error("regression is degenerate: {0}")]
    DegenerateRegression(&'static str),
    #[error("pattern frequency {0} MHz is missing from the spectrum")]
    PatternFrequencyMissing(f64),
    #[error("frequency grid does not match the model grid")]
    GridMismatch,
    #[error("training targets have zero variance")]
    DegenerateTargets,
    #[error("internal consistency failure: {0}")]
    InternalConsistency(String),
    #[error("every estimate failed")]
    AllEstimatesFailed,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable variant name, printed by the CLI.
    pub fn name(&self) -> &'static str {
        match self {
            Error::InvalidSpectrum(_) => "InvalidSpectrum",
            Error::InvalidParams(_) => "InvalidParams",
            Error::OutOfRange(_) => "OutOfRange",
            Error::DuplicateSelection { .. } => "DuplicateSelection",
            Error::NonFinite(_) => "NonFinite",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::NotPositiveDefinite { .. } => "NotPositiveDefinite",
            Error::SingularNormalEquations { .. } => "SingularNormalEquations",
            Error::NonFiniteResidual => "NonFiniteResidual",
            Error::NonFiniteObjective { .. } => "NonFiniteObjective",
            Error::UnderDetermined { .. } => "UnderDetermined",
            Error::FitDiverged { .. } => "FitDiverged",
            Error::DipDetectionFailed => "DipDetectionFailed",
            Error::DegenerateRegression(_) => "DegenerateRegression",
            Error::PatternFrequencyMissing(_) => "PatternFrequencyMissing",
            Error::GridMismatch => "GridMismatch",
            Error::DegenerateTargets => "DegenerateTargets",
            Error::InternalConsistency(_) => "InternalConsistency",
            Error::AllEstimatesFailed => "AllEstimatesFailed",
            Error::Config(_) => "Config",
            Error::Parse { .. } => "Parse",
            Error::Io { .. } => "Io",
            Error::Json(_) => "Json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
