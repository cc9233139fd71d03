use thiserror::Error;

/// Errors surfaced by the library. Batch drivers are expected to treat most of
/// these as per-record failures and keep going.
#[derive(Debug, Error)]
pub enum Error {
    #[error("no fenced code block found in model output")]
    NoFencedBlock,

    #[error("aligned position {position} does not fit in response span of length {span_len}")]
    SpanTooShort { position: usize, span_len: usize },

    #[error("instance has no loss-bearing positions (sum of mask*weight is zero)")]
    DegenerateInstance,

    #[error("no non-degenerate instances in corpus")]
    EmptyCorpus,

    #[error("token id {id} out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },

    #[error("index {index} out of range for sequence of length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("metric undefined on empty input")]
    EmptyMetricInput,

    #[error("CCR undefined for an empty patch (no normalized lines)")]
    EmptyPatch,

    #[error("statistic undefined: {0}")]
    UndefinedStatistic(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
