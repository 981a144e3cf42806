use thiserror::Error;

/// Errors surfaced by the core library. Validation problems are reported
/// through [`crate::mdp::ValidationReport`] instead and never abort.
#[derive(Debug, Error)]
pub enum Error {
    /// p places mass where q has none, so a ratio-based quantity is undefined.
    #[error("support violation at index {index:?}: p={p} but q=0")]
    SupportViolation { index: (usize, usize, usize), p: f64 },

    /// A sampled batch requested entries from an empty dataset.
    #[error("empty source dataset: {0}")]
    EmptySource(&'static str),

    /// A JSONL dataset line failed to parse.
    #[error("malformed line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },

    /// Requested an environment name not in the catalog.
    #[error("unknown environment '{0}'")]
    UnknownEnv(String),

    /// Requested an f-generator name not in the registry.
    #[error("unknown f-generator '{0}'")]
    UnknownGenerator(String),

    /// An exact linear solve or iteration failed to reach its tolerance.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The inner Q iterate left the region any consistent solution can occupy.
    #[error("inner solve diverged: |q|_inf = {q_norm:.3e} exceeds guard {bound:.3e}")]
    DivergenceGuard { q_norm: f64, bound: f64 },

    /// Structural problem with an input (shape mismatch, invalid id, bad config value).
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
