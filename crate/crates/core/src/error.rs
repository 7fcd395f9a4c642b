use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate action (dx = {dx}, dy = {dy}): lateral displacement without forward motion")]
    DegenerateAction { dx: f64, dy: f64 },

    #[error("invalid anchor grid: {0}")]
    InvalidGrid(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("polyline needs at least two vertices, got {0}")]
    EmptyPolyline(usize),

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("schema violation in field `{field}`: {message}")]
    Schema { field: String, message: String },

    #[error("step called on a finished episode")]
    SteppedDoneEpisode,

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("loss graph must reduce to exactly one scalar output, found {0}")]
    NonScalarLoss(usize),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("checkpoint mismatch: {0}")]
    VersionMismatch(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("transition {0} has no recorded old-policy probabilities")]
    MissingOldProbabilities(usize),

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("scenario pool is empty")]
    EmptyScenarioPool,

    #[error("no safe frames to average over")]
    NoSafeFrames,

    #[error("too few frames for a second difference (need 3 safe frames in at least one episode)")]
    TooFewFrames,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }

    pub fn schema(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
