//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes of operands do not agree with the operation's contract.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// An argument violates a precondition (invalid axis, empty batch, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Degenerate input for which the result is undefined (constant vector,
    /// zero variance, all-tied ranks).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// A computation produced non-finite values.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Training aborted because a loss became non-finite.
    #[error("non-finite loss in epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    /// Row-addressed manifest parse failure.
    #[error("{path}:{row}: {msg}")]
    Parse {
        path: String,
        row: usize,
        msg: String,
    },

    /// Manifest kind does not support the requested operation.
    #[error("unsupported manifest kind: {0}")]
    UnsupportedKind(String),

    /// Checkpoint file carries an unknown format version.
    #[error("checkpoint version mismatch: found {found}, expected {expected}")]
    CheckpointVersion { found: u32, expected: u32 },

    /// Checkpoint payload is shorter than the header promises.
    #[error("checkpoint truncated: need {need} payload bytes, file has {have}")]
    CheckpointTruncated { need: usize, have: usize },

    /// Checkpoint tensor shape disagrees with the expected parameter shape.
    #[error("checkpoint shape mismatch for '{name}': stored {stored:?}, expected {expected:?}")]
    CheckpointShape {
        name: String,
        stored: Vec<usize>,
        expected: Vec<usize>,
    },

    /// Checkpoint names a parameter the target model does not have.
    #[error("checkpoint has unknown parameter '{0}'")]
    CheckpointUnknownParam(String),

    /// Target model expects a parameter the checkpoint lacks.
    #[error("checkpoint is missing parameter '{0}'")]
    CheckpointMissingParam(String),

    /// Checkpoint header is malformed.
    #[error("malformed checkpoint: {0}")]
    CheckpointFormat(String),

    /// Stored configuration is incompatible with the requested one.
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),

    /// Filesystem failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Image decode/encode failure.
    #[error("image error: {0}")]
    Image(String),
}

pub type Result<T> = std::result::Result<T, Error>;
