use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("mask length {got} does not match {expected} positions")]
    MaskMismatch { expected: usize, got: usize },
    #[error("empty view")]
    EmptyView,
    #[error("empty sequence")]
    EmptySequence,
    #[error("empty input")]
    EmptyInput,
    #[error("invalid sequence {id}: {reason}")]
    InvalidSequence { id: String, reason: String },
    #[error("requested {requested} instructive frames but only {available} are available")]
    NotEnoughFrames { requested: usize, available: usize },
    #[error("insufficient distractors: {0}")]
    InsufficientDistractors(String),
    #[error("specified-action counting needs an exemplar for {0}")]
    MissingExemplar(String),
    #[error("unknown parameter {0}")]
    MissingParam(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
