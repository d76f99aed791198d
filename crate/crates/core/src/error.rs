use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("non-finite value produced at index {0}")]
    NonFinite(usize),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("invalid client profile: {0}")]
    InvalidProfile(String),
    #[error("too few cases: have {have}, need at least {need}")]
    TooFewCases { have: usize, need: usize },
    #[error("bad fold count k={k} for {n} items")]
    BadK { k: usize, n: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid training configuration: {0}")]
    InvalidTrainConfig(String),
    #[error("strategy {0} is not a server-optimizer strategy")]
    WrongStrategy(String),
    #[error("client {0} has an empty training split")]
    EmptyClient(String),
    #[error("epoch candidate {epochs} does not divide budget {budget}")]
    NonDivisibleBudget { budget: usize, epochs: usize },
    #[error("empty mask")]
    EmptyMask,
    #[error("empty reference mask")]
    EmptyReference,
    #[error("labels need at least one positive and one negative")]
    DegenerateLabels,
    #[error("no ground-truth lesions")]
    NoGroundTruth,
    #[error("value {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("need at least {need} units, got {have}")]
    TooFewUnits { have: usize, need: usize },
    #[error("unit mismatch: {0}")]
    UnitMismatch(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("bad file format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
