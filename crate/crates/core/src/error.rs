use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid json in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid vocabulary: {0}")]
    Vocabulary(String),
    #[error("empty token text for {0:?}")]
    EmptyToken(String),

    #[error("bad magic {found:?}, expected \"CDMP\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported dump version {0}, expected 1")]
    VersionMismatch(u32),
    #[error("record {record}: truncated payload")]
    TruncatedPayload { record: usize },
    #[error("record {record}: non-finite logit at position {position}, column {column}")]
    NonFiniteValue { record: usize, position: usize, column: usize },
    #[error("record {record}: unsupported dtype {dtype}")]
    UnsupportedDtype { record: usize, dtype: u8 },
    #[error("record {record}: {reason}")]
    InvalidMatrix { record: usize, reason: String },

    #[error("empty token sequence")]
    EmptySequence,
    #[error("length mismatch for {what}: {left} vs {right}")]
    LengthMismatch { what: &'static str, left: usize, right: usize },
    #[error("span alignment does not cover {positions} positions on the {side} side")]
    CoverageMismatch { side: &'static str, positions: usize },
    #[error("k = {k} exceeds vocabulary size {vocab_size}")]
    KTooLarge { k: usize, vocab_size: usize },
    #[error("mapping table direction {found} does not match expected {expected}")]
    DirectionMismatch { expected: &'static str, found: &'static str },
    #[error("target id {id} out of range for vocabulary size {vocab_size}")]
    TargetOutOfRange { id: u32, vocab_size: usize },
    #[error("record count mismatch: student dump has {student}, teacher dump has {teacher}")]
    RecordCountMismatch { student: usize, teacher: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("sentence {index}: {source}")]
    Sentence {
        index: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn in_sentence(self, index: usize) -> Self {
        Error::Sentence { index, source: Box::new(self) }
    }

    /// True when the error is caused by an internal invariant breach rather
    /// than by bad input.
    pub fn is_invariant_violation(&self) -> bool {
        match self {
            Error::Invariant(_) => true,
            Error::Sentence { source, .. } => source.is_invariant_violation(),
            _ => false,
        }
    }
}
