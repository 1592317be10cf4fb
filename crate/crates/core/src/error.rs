use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape in {op}: {detail}")]
    InvalidShape { op: &'static str, detail: String },

    #[error("gradient oracle invalid: {0}")]
    OracleInvalid(String),

    #[error("duplicate event type `{0}`")]
    DuplicateType(String),

    #[error("invalid event type name `{0}`")]
    InvalidName(String),

    #[error("corpus mismatch: {predicted} predicted sentences vs {gold} gold sentences")]
    CorpusMismatch { predicted: usize, gold: usize },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unknown label `{0}`")]
    UnknownLabel(String),

    #[error("invalid label index {index} (label count {count})")]
    InvalidLabel { index: usize, count: usize },

    #[error("episode infeasible: {0}")]
    EpisodeInfeasible(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("no precomputed embedding for sentence {0}")]
    MissingEmbedding(usize),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    Diverged { iteration: usize, loss: f64 },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidShape {
            op,
            detail: detail.into(),
        }
    }
}
