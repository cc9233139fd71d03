//! Preservation-weighted training-data preparation and minimal-edit patch
//! evaluation for paired buggy/fixed code.
//!
//! The pipeline: normalize source text, align buggy and fixed token
//! sequences to find copy-worthy spans, build per-token loss weights and
//! masks, order training instances by line-diff difficulty, and evaluate
//! candidate patches with edit-locality metrics, agreement statistics, and
//! contamination checks. A small trainable bigram model demonstrates the
//! weighted objective end to end.

pub mod agreement;
pub mod align;
pub mod curriculum;
pub mod demo;
pub mod error;
pub mod integrity;
pub mod metrics;
pub mod normalize;
pub mod objective;

pub use align::{AlignedResponse, MatchingBlock, PreservationMask, Span, TokenSeq};
pub use error::{Error, Result};
pub use metrics::{MetricsReport, PassAtKInput, PatchEvaluation};
pub use normalize::{NormalizedText, PromptEnvelope, SourceText};
pub use objective::{
    BatchMode, BigramModel, MaskingMode, TokenLoss, TrainConfig, WeightedSequence,
};
