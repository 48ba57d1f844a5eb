//! Condition-disaggregated evaluation of subject-verb agreement over
//! language-model training.
//!
//! The crate is organised as a pipeline:
//!
//! * [`stimuli`] builds and validates minimal pairs (simple and
//!   noun-PP-attractor conditions).
//! * [`ngram`] indexes corpora and serves n-gram oracle scorers.
//! * [`scoring`] turns a scorer plus items into [`scoring::ScoreRecord`]s.
//! * [`provider`] talks to an external checkpoint server over stdio.
//! * [`analysis`] disaggregates records, bootstraps intervals, builds
//!   trajectories and labels heuristic phases.
//! * [`report`] renders condition curves as SVG.
//! * [`pipeline`] wires the stages together from a [`config::RunConfig`].
//!
//! Data-parallel loops go through [`par::Exec`]; with the `parallel`
//! feature disabled every loop runs sequentially and produces identical
//! results.

pub mod analysis;
pub mod config;
pub mod ngram;
pub mod par;
pub mod pipeline;
pub mod provider;
pub mod report;
pub mod scoring;
pub mod stimuli;

pub use par::Exec;

/// Version string embedded in manifests and method metadata.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Lowercase hex SHA-256 of a byte slice.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}
