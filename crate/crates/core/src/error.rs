use thiserror::Error;

/// Errors raised by the estimation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid probability law: {0}")]
    InvalidLaw(String),

    #[error("unknown system '{0}'")]
    UnknownSystem(String),

    #[error("unsupported parameter: {0}")]
    Unsupported(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("environment horizon {have} is shorter than the required {need}")]
    HorizonTooShort { have: usize, need: usize },

    #[error("empty point cloud")]
    EmptyCloud,

    #[error("cover does not cover the cloud; uncovered point index {index}: {point}")]
    Uncovered { index: usize, point: String },

    #[error("infeasible at epsilon = {epsilon}: {needed} cloud points needed, budget is {budget}")]
    Infeasible {
        epsilon: f64,
        needed: u64,
        budget: u64,
    },

    #[error("system is not structured: {0}")]
    NotStructured(String),

    #[error("measure/system incompatibility: {0}")]
    Incompatible(String),

    #[error("empty conditioning bucket {key:?}; increase the orbit length (currently {steps} steps)")]
    EmptyBucket { key: Vec<u8>, steps: usize },

    #[error("mass target 1 - delta = {target} unreachable; available centers capture {reached}")]
    MassUnreachable { target: f64, reached: f64 },

    #[error("zero-mass Bowen ball at n = {n}; the empirical measure needs refinement")]
    ZeroMass { n: usize },

    #[error("malformed counts: {0}")]
    MalformedCounts(String),

    #[error("too few scales: {have} given, {need} needed")]
    TooFewScales { have: usize, need: usize },

    #[error("missing curve: {0}")]
    MissingCurve(String),

    #[error("budget exceeded: {0}")]
    Budget(String),

    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
