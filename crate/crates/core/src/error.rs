use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid column: {0}")]
    InvalidColumn(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("shape mismatch: {0}")]
    ShapeError(String),
    #[error("configuration error: {0}")]
    ConfigError(String),
    #[error("infeasible entry bound: {0}")]
    InfeasibleBound(String),

    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("invalid lag: {0}")]
    InvalidLag(String),
    #[error("invalid segment: {0}")]
    InvalidSegment(String),
    #[error("invalid labels: {0}")]
    InvalidLabels(String),

    #[error("cohort too small: {0}")]
    InsufficientCohort(String),
    #[error("no paired data available under leakage level {0}")]
    NoPairedData(String),
    #[error("singular linear system: {0}")]
    SingularSystem(String),
    #[error("invalid candidate set: {0}")]
    InvalidCandidates(String),
    #[error("sequence too short: {0}")]
    InvalidLength(String),

    #[error("YAML parse error at line {line}, column {column}: {message}")]
    ParseError {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown key: {0}")]
    StrictKeyError(String),
    #[error("missing field: {0}")]
    MissingField(String),

    #[error("format error: {0}")]
    FormatError(String),
    #[error("ingest error: {0}")]
    IngestError(String),
    #[error("empty cohort")]
    EmptyCohort,
    #[error("sanity gate failed on column {variable}: {reason}")]
    SanityFailure { variable: String, reason: String },
    #[error("integrity check failed: {0}")]
    IntegrityError(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
