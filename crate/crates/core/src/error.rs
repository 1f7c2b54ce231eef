use std::time::Duration;

use thiserror::Error;

pub type Result<T, E = HrtError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HrtError {
    #[error("length mismatch for {what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: model expects {expected} columns, input has {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("column {column} is degenerate (zero variance)")]
    DegenerateColumn { column: usize },

    #[error("zero proposal density at sample {index}; cannot form importance weight")]
    ZeroProposalDensity { index: usize },

    #[error("data error at row {row}: {message}")]
    Data { row: usize, message: String },

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<HrtError>,
    },

    #[error("bootstrap member {member}: {source}")]
    Member {
        member: usize,
        #[source]
        source: Box<HrtError>,
    },

    #[error("feature {feature}: {source}")]
    Feature {
        feature: usize,
        #[source]
        source: Box<HrtError>,
    },

    #[error("external predictor: {0}")]
    External(#[from] ExternalError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl HrtError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        HrtError::InvalidArgument(msg.into())
    }

    pub(crate) fn in_fold(self, fold: usize) -> Self {
        HrtError::Fold {
            fold,
            source: Box::new(self),
        }
    }

    pub(crate) fn in_member(self, member: usize) -> Self {
        HrtError::Member {
            member,
            source: Box::new(self),
        }
    }

    pub(crate) fn in_feature(self, feature: usize) -> Self {
        HrtError::Feature {
            feature,
            source: Box::new(self),
        }
    }

    /// Short machine-readable tag used in CLI error output and FFI status mapping.
    pub fn kind(&self) -> &'static str {
        match self {
            HrtError::LengthMismatch { .. } => "length_mismatch",
            HrtError::NonFinite { .. } => "non_finite",
            HrtError::InvalidArgument(_) => "invalid_argument",
            HrtError::DimensionMismatch { .. } => "dimension_mismatch",
            HrtError::Singular(_) => "singular",
            HrtError::Diverged(_) => "diverged",
            HrtError::DegenerateColumn { .. } => "degenerate_column",
            HrtError::ZeroProposalDensity { .. } => "zero_proposal_density",
            HrtError::Data { .. } => "data",
            HrtError::Fold { source, .. }
            | HrtError::Member { source, .. }
            | HrtError::Feature { source, .. } => source.kind(),
            HrtError::External(_) => "external",
            HrtError::Io(_) => "io",
            HrtError::Json(_) => "json",
            HrtError::Csv(_) => "csv",
        }
    }
}

/// Failures talking to an out-of-process predictor. Each is reported distinctly.
#[derive(Debug, Error)]
pub enum ExternalError {
    #[error("failed to launch `{command}`: {source}")]
    Spawn {
        command: String,
        #[source]
        source: std::io::Error,
    },

    #[error("process exited unexpectedly (status: {status})")]
    Exited { status: String },

    #[error("malformed frame: {0}")]
    Malformed(String),

    #[error("no response within {0:?}")]
    Timeout(Duration),

    #[error("predictor reported error: {0}")]
    Remote(String),

    #[error("pipe i/o: {0}")]
    Pipe(#[source] std::io::Error),
}
