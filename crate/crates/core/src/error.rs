use std::io;

use thiserror::Error;

use crate::trainers::TrainMode;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("duplicate chunk id {0:?}")]
    DuplicateId(String),

    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("format error: {0}")]
    Format(String),

    #[error("template error: {0}")]
    Template(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("degenerate retrieval: {retrieved} chunk(s) retrieved, at least 2 required")]
    DegenerateRetrieval { retrieved: usize },

    #[error("no trainer configured for mode {0}")]
    MissingTrainer(TrainMode),

    #[error("freeze contract violated: {0} parameters changed during training")]
    FreezeViolation(&'static str),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("round mismatch: expected {expected}, got {actual}")]
    RoundMismatch { expected: u64, actual: u64 },

    #[error("all clients reported zero examples")]
    ZeroExamples,

    #[error("frame of {0} bytes exceeds the 256 MiB limit")]
    FrameTooLarge(usize),

    #[error("malformed frame: {0}")]
    MalformedFrame(String),

    #[error("client {client_id:?} dropped: {reason}")]
    ClientDropped { client_id: String, reason: String },

    #[error("cannot bind {address}: {source}")]
    Bind {
        address: String,
        #[source]
        source: io::Error,
    },

    #[error("cannot connect to {address}: {source}")]
    Connection {
        address: String,
        #[source]
        source: io::Error,
    },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("peer reported error {code}: {detail}")]
    Remote { code: String, detail: String },

    #[error("requested {requested} examples, only {available} available")]
    InsufficientExamples { requested: usize, available: usize },

    #[error("schema error at line {line}: {message}")]
    Schema { line: usize, message: String },
}
