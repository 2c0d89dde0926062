//! Error type shared across the pipeline.

use crate::path::AnswerKind;

/// Everything that can go wrong inside the library.
///
/// Variants are deliberately fine-grained so callers can distinguish
/// "the backend is down" from "the backend answered garbage" from
/// "the inputs were malformed".
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Generator output was empty or whitespace-only.
    #[error("cannot parse reasoning path from empty or whitespace-only text")]
    ParseEmpty,

    /// No answer of the requested kind could be extracted from the text.
    #[error("no answer could be extracted from {0:?}")]
    AnswerUnparseable(String),

    /// Two answers of different kinds were compared.
    #[error("answer kinds differ: {left:?} vs {right:?}")]
    KindMismatch { left: AnswerKind, right: AnswerKind },

    /// A step index fell outside the valid 1-based range.
    #[error("step index {index} out of range 1..={len}")]
    IndexOutOfRange { index: usize, len: usize },

    /// A splice was attempted with an empty replacement suffix.
    #[error("splice suffix must contain at least one step")]
    EmptySuffix,

    /// A synthetic task was requested with too few steps.
    #[error("synthetic task needs at least {min} steps, got {got}")]
    InvalidArity { got: usize, min: usize },

    /// The scorer could not be reached (transport failure, retries exhausted).
    #[error("scorer unavailable: {0}")]
    ScorerUnavailable(String),

    /// The scorer answered, but with something we cannot use.
    #[error("scorer returned a malformed response: {0}")]
    ScorerMalformed(String),

    /// An operation that needs at least one example got none.
    #[error("dataset is empty")]
    EmptyDataset,

    /// A tree operation referenced a node id that does not exist.
    #[error("unknown tree node {0}")]
    UnknownNode(usize),

    /// The generator failed (transport failure, retries exhausted, bad payload).
    #[error("generation failed: {0}")]
    GenerationFailed(String),

    /// A scripted generator ran out of responses (or had no entry for a prompt).
    #[error("scripted generator exhausted: {0}")]
    ScriptExhausted(String),

    /// The remote endpoint rejected our credentials; retrying would not help.
    #[error("authentication failed with status {0}")]
    AuthFailed(u16),

    /// A simulated backend received a prompt it does not know how to answer.
    #[error("prompt not recognized by simulated backend: {0}")]
    PromptUnrecognized(String),

    /// A prefix prompt could not be aligned against a synthetic task.
    #[error("prefix cannot be aligned to the task: {0}")]
    PrefixUnalignable(String),

    /// Two parallel lists that must have equal lengths did not.
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    /// An aggregate was requested over zero items.
    #[error("input is empty")]
    EmptyInput,

    /// A dataset file could not be read or decoded.
    #[error("dataset unreadable: {0}")]
    DatasetUnreadable(String),

    /// An experiment configuration failed validation before any work began.
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
