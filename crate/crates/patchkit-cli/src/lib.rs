//! Library half of the `patchkit` binary: JSONL formats with provenance
//! headers and the batch pipeline stages. Kept as a library so integration
//! tests can drive the stages directly.

pub mod formats;
pub mod pipeline;
