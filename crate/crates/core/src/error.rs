use std::io;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("invalid box delta: {0}")]
    InvalidDelta(String),

    #[error("layer stack is empty")]
    EmptyStack,

    #[error("no valid anchor scale: {0}")]
    NoValidScale(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no positive or negative anchors available to sample")]
    EmptySample,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("forward cache does not match parameters: {0}")]
    Cache(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("epoch {epoch} out of range (schedule has {epochs} epochs)")]
    EpochOutOfRange { epoch: usize, epochs: usize },

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("image format error: {0}")]
    Image(String),

    #[error("cannot place heads: {0}")]
    Placement(String),

    #[error("recall undefined: no ground-truth boxes")]
    NoGroundTruth,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
