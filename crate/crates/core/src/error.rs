use thiserror::Error;

/// Errors produced by the sampling laboratory.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid sequence: {0}")]
    InvalidSequence(String),
    #[error("invalid index: {0}")]
    InvalidIndex(String),
    #[error("state space mismatch: {0}")]
    SpecMismatch(String),
    #[error("invalid pmf: {0}")]
    InvalidPmf(String),
    #[error("invalid time {0}: must be finite and nonnegative")]
    InvalidTime(f64),
    #[error("state space with {0} states exceeds the enumeration cap")]
    TooLarge(String),
    #[error("zero density at state {0}")]
    ZeroDensity(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("step too large: move mass {mass} exceeds 1")]
    StepTooLarge { mass: f64 },
    #[error("degenerate score: {0}")]
    DegenerateScore(String),
    #[error("exact pushforward unsupported: {0}")]
    UnsupportedExact(String),
    #[error("kernel is not reversible with respect to the target (max violation {0:e})")]
    NotReversible(f64),
    #[error("power iteration did not converge after {0} iterations")]
    NoConvergence(usize),
    #[error("insufficient decay: {0}")]
    InsufficientDecay(String),
    #[error("empty input")]
    EmptyInput,
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
