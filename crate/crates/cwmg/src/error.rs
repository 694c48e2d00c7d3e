//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Array shapes are incompatible for the requested operation.
    #[error("dimension mismatch: {0}")]
    Dim(String),

    /// An index (class id, word position, ...) is out of range.
    #[error("index out of range: {0}")]
    Index(String),

    /// A caller-supplied parameter violates the operation's preconditions.
    #[error("invalid parameter: {0}")]
    Param(String),

    /// An internal contract was violated (non-scalar loss root, probabilities
    /// that do not sum to one, non-finite values, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Unknown label or id in a vocabulary table.
    #[error("unknown {token_type} token: {value}")]
    Lookup { token_type: String, value: String },

    /// Malformed binary input; `offset` is the byte position of the problem.
    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: usize, msg: String },

    /// Time signature other than 4/4.
    #[error("unsupported meter {numerator}/{denominator}: only 4/4 input is accepted")]
    UnsupportedMeter { numerator: u8, denominator: u8 },

    /// A token sequence cannot be decoded back into notes.
    #[error("structural error at word {index}: {msg}")]
    Structural { index: usize, msg: String },

    /// A checkpoint file is malformed; `field` names the offending part.
    #[error("corrupt checkpoint ({field}): {msg}")]
    Checkpoint { field: String, msg: String },

    /// Malformed corpus file; `line` is 1-based.
    #[error("corpus error at line {line}: {msg}")]
    Corpus { line: usize, msg: String },

    /// Bad run configuration (unknown key, unparsable value).
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn dim(msg: impl Into<String>) -> Self {
        Error::Dim(msg.into())
    }

    pub fn param(msg: impl Into<String>) -> Self {
        Error::Param(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
