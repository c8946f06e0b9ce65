use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("map version {new} does not exceed latest published version {latest}")]
    NonMonotoneVersion { new: u64, latest: u64 },

    #[error("publish time {at} is not after previous publish time {previous}")]
    NonMonotonePublishTime { at: f64, previous: f64 },

    #[error("path needs at least two points, got {0}")]
    DegeneratePath(usize),

    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("point {index} does not strictly dominate the reference point")]
    ReferenceNotDominated { index: usize },

    #[error("no collision-free member on the frontier")]
    NoAdmissibleOperatingPoint,

    #[error("logs are misaligned: {0}")]
    MisalignedLogs(String),

    #[error("event {0} has no ground-truth label")]
    UnlabeledEvent(u64),

    #[error("duplicate seed {0} in batch")]
    DuplicateSeed(u64),

    #[error("scenario: {0}")]
    Scenario(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(value: f64, what: &'static str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite(what))
    }
}
