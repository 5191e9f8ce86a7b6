use thiserror::Error;

pub type Result<T, E = TourError> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// Geometry errors raised while handling an interactive update are
/// recoverable: the caller keeps its previous projection.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TourError {
    #[error("rank deficient: residual norm {residual:e} at column {column}")]
    RankDeficient { column: usize, residual: f64 },
    #[error("dimension mismatch: expected {expected}, got {actual} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("matrix is not orthonormal (max deviation {deviation:e})")]
    NotOrthonormal { deviation: f64 },
    #[error("invalid projection shape {p}x{d}: need p >= 2 and 1 <= d < p")]
    InvalidShape { p: usize, d: usize },
    #[error("variable index {index} out of range for p = {p}")]
    VariableOutOfRange { index: usize, p: usize },
    #[error("target norm {norm} too close to 1 for the zeroed update")]
    TargetTooLarge { norm: f64 },
    #[error("target norm {norm:e} too small to define a direction")]
    DegenerateTarget { norm: f64 },
    #[error("continuous completion requires a previous basis")]
    MissingPrevBasis,
    #[error("invalid slice: {0}")]
    InvalidSlice(String),
    #[error("domain error: {0}")]
    DomainError(String),
    #[error("variable {index} has an empty range (min = max = {value})")]
    DegenerateRange { index: usize, value: f64 },
    #[error("parse error at row {row}, column {column}: {message}")]
    ParseError {
        row: usize,
        column: usize,
        message: String,
    },
    #[error("no usable rows in data")]
    EmptyData,
    #[error("column '{0}' has zero variance")]
    ZeroVariance(String),
    #[error("grid of {points} points exceeds cap of {cap}")]
    GridTooLarge { points: u128, cap: usize },
    #[error("pooled covariance is singular")]
    SingularCovariance,
    #[error("class '{class}' has {count} rows, need at least {needed}")]
    TooFewSamples {
        class: String,
        count: usize,
        needed: usize,
    },
    #[error("data has no class labels")]
    MissingLabels,
    #[error("prediction file frame does not match data: {0}")]
    FrameMismatch(String),
    #[error("unknown source '{0}'")]
    UnknownSource(String),
    #[error("io error: {0}")]
    Io(String),
}

impl TourError {
    /// Stable machine-readable code used on the wire.
    pub fn code(&self) -> &'static str {
        match self {
            TourError::RankDeficient { .. } => "rank_deficient",
            TourError::DimensionMismatch { .. } => "dimension_mismatch",
            TourError::NotOrthonormal { .. } => "not_orthonormal",
            TourError::InvalidShape { .. } => "invalid_shape",
            TourError::VariableOutOfRange { .. } => "variable_out_of_range",
            TourError::TargetTooLarge { .. } => "target_too_large",
            TourError::DegenerateTarget { .. } => "degenerate_target",
            TourError::MissingPrevBasis => "missing_prev_basis",
            TourError::InvalidSlice(_) => "invalid_slice",
            TourError::DomainError(_) => "domain_error",
            TourError::DegenerateRange { .. } => "degenerate_range",
            TourError::ParseError { .. } => "parse_error",
            TourError::EmptyData => "empty_data",
            TourError::ZeroVariance(_) => "zero_variance",
            TourError::GridTooLarge { .. } => "grid_too_large",
            TourError::SingularCovariance => "singular_covariance",
            TourError::TooFewSamples { .. } => "too_few_samples",
            TourError::MissingLabels => "missing_labels",
            TourError::FrameMismatch(_) => "frame_mismatch",
            TourError::UnknownSource(_) => "unknown_source",
            TourError::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for TourError {
    fn from(e: std::io::Error) -> Self {
        TourError::Io(e.to_string())
    }
}
