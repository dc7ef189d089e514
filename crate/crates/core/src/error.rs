use thiserror::Error;

/// Errors raised across tree construction, scenario ingestion, evolution and LP emission.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("tree structure is empty")]
    EmptyStructure,
    #[error("tree structure must be non-decreasing with every stage >= 1, got {0:?}")]
    NonMonotoneStructure(Vec<usize>),
    #[error("terminal stage requires {terminal} nodes but only {scenarios} scenarios are available")]
    TerminalExceedsScenarios { terminal: usize, scenarios: usize },
    #[error("expected length {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("gene {index} = {value} lies outside [0, 1]")]
    GeneOutOfRange { index: usize, value: f64 },
    #[error("chromosome maps to fewer nodes than required at stage {stage}")]
    InvalidTree { stage: usize },
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("node set is empty")]
    EmptyNodeSet,
    #[error("malformed row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("non-finite value at row {row}, column {column}")]
    NonFiniteValue { row: usize, column: usize },
    #[error("bad probabilities: {0}")]
    BadProbabilities(String),
    #[error("GARCH parameters are not covariance stationary (alpha + beta = {0})")]
    NonStationaryParams(f64),
    #[error("invalid GARCH parameters: {0}")]
    InvalidParams(String),
    #[error("invalid count: {0}")]
    InvalidCount(String),
    #[error("mutation count m = {m} must lie in 1..={length}")]
    BadM { m: usize, length: usize },
    #[error("invalid operator structure: {0}")]
    BadOperators(String),
    #[error("invalid evolution config: {0}")]
    BadConfig(String),
    #[error("invalid chromosome budget exhausted after {discarded} discards in generation {iteration}")]
    TooManyInvalid { iteration: usize, discarded: usize },
    #[error("tree has fewer than two stages")]
    DegenerateTree,
    #[error("invalid scenario tree: {0}")]
    BadTree(String),
    #[error("LP parse error at line {line}: {reason}")]
    LpParse { line: usize, reason: String },
    #[error("I/O error: {0}")]
    Io(String),
    #[error("serialization error: {0}")]
    Serde(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
