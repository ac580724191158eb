//! Conversational span-extraction QA with scheduled sampling over the
//! answer history.
//!
//! The crate trains a small GRU-based reader on multi-turn QA data where
//! each question is encoded together with a window of previous turns. The
//! answers filled into that window come either from the gold annotations
//! (teacher forcing) or from a cache of the model's own predictions from
//! the previous epoch; a per-turn coin flip with schedule-controlled bias
//! decides which. Inference can likewise run with gold history ("SM") or
//! with the model's own running predictions ("MP"), and the F1 gap between
//! the two is the quantity the training schedules are designed to shrink.

pub mod corpus;
pub mod infer;
pub mod metrics;
pub mod model;
mod par;
pub mod sampling;
pub mod tensor;
pub mod trainer;

use thiserror::Error;

/// Unified error type for the crate.
///
/// Variants carry enough context to point at the offending input: byte
/// offsets for malformed files, conversation/turn identifiers for semantic
/// problems inside otherwise well-formed data.
#[derive(Debug, Error)]
pub enum Error {
    /// The raw bytes could not be parsed at all.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    /// The file parsed but violates a dataset invariant.
    #[error("integrity error in conversation {conversation_id} turn {turn_id}: {message}")]
    Integrity {
        conversation_id: String,
        turn_id: u32,
        message: String,
    },

    /// A conversation names a source we have no domain mapping for.
    #[error("unknown source {source_name:?} in conversation {conversation_id}")]
    UnknownSource {
        conversation_id: String,
        source_name: String,
    },

    /// A configuration value is out of range or inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// A function was called with arguments it cannot work on.
    #[error("input error: {0}")]
    Input(String),

    /// Gold supervision does not fit the passage it claims to describe.
    #[error("supervision error: {0}")]
    Supervision(String),

    /// A non-finite value appeared where the math requires finite ones.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A schedule was built or queried outside its domain.
    #[error("schedule error: {0}")]
    Schedule(String),

    /// A training regime specification is internally inconsistent.
    #[error("regime error: {0}")]
    Regime(String),

    /// An evaluation was asked to score turns it has no predictions for.
    #[error("coverage error: missing predictions for {missing:?}")]
    Coverage { missing: Vec<(String, u32)> },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
