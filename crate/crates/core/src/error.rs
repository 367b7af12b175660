use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid control {value} for robot {robot}: allowed range [{lo}, {hi}]")]
    InvalidControl { robot: usize, value: f64, lo: f64, hi: f64 },
    #[error("invalid limits: {0}")]
    InvalidLimits(String),
    #[error("path collides on pair ({0}, {1}) at segment {2}")]
    PathInfeasible(usize, usize, usize),
    #[error("priority undetermined for conflicting pair ({0}, {1})")]
    UndeterminedPriority(usize, usize),
    #[error("invalid priority graph: {0}")]
    InvalidGraph(String),
    #[error("cycle has no cross-section on edge ({0}, {1})")]
    InvalidCycle(usize, usize),
    #[error("more than {0} elementary cycles")]
    TooManyCycles(usize),
    #[error("safety margin {margin} does not exceed step {step}")]
    InsufficientMargin { margin: f64, step: f64 },
    #[error("unsupported priorities: {0}")]
    UnsupportedPriorities(String),
    #[error("configuration violates priority {0} over {1}")]
    PriorityViolated(usize, usize),
    #[error("observation inconsistent with dynamics for robot {0}")]
    InconsistentObservation(usize),
    #[error("scenario field `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("instance too large: {0}")]
    TooLarge(String),
    #[error("invariant breach at slot {slot}: {detail}")]
    InvariantBreach { slot: u64, detail: String },
    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { field: field.into(), message: message.into() }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
