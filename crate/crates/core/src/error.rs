//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("requested a sample of size 0")]
    EmptyDraw,

    #[error("prompt {prompt_index} has weight {weight} but no completions in pool '{pool}'")]
    MissingPrompt {
        prompt_index: usize,
        weight: f64,
        pool: String,
    },

    #[error("sample of size {n} is too small; need at least {min}")]
    SampleTooSmall { n: usize, min: usize },

    #[error("symbol space mismatch: {0}")]
    SpaceMismatch(String),

    #[error("empty pool: {0}")]
    EmptyPool(String),

    #[error("line {line}: malformed record: {reason}")]
    MalformedRecord { line: usize, reason: String },

    #[error("line {line}: symbol {id} out of range (vocabulary size {vocab_size})")]
    SymbolOutOfRange {
        line: usize,
        id: u32,
        vocab_size: u32,
    },

    #[error("line {line}: completion length {len} exceeds maximum {max}")]
    LengthExceeded { line: usize, len: usize, max: usize },

    #[error("unknown token id {id}; not in decode table or special set")]
    UnknownToken { id: u32 },

    #[error("decoded completion length {len} exceeds character cap {cap}")]
    DecodedTooLong { len: usize, cap: usize },

    #[error("explicit support requires {pairs} kernel evaluations per term, above the cap {cap}")]
    SupportTooLarge { pairs: usize, cap: usize },

    #[error("oracle returned invalid probability {value} for prompt {prompt_index}")]
    InvalidProbability { prompt_index: usize, value: f64 },

    #[error("observed completion has probability zero under the reference; {statistic} is undefined")]
    ZeroProbabilityObservation { statistic: String },

    #[error("null distribution key mismatch: {0}")]
    NullKeyMismatch(String),

    #[error("pool '{0}' is too small to split into disjoint halves")]
    PoolTooSmallToSplit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
