use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid token {0:?}: tokens are non-empty and contain no whitespace")]
    InvalidToken(String),
    #[error("invalid symbol {0:?}")]
    InvalidSymbol(String),
    #[error("invalid rule `{rule}`: {reason}")]
    InvalidRule { rule: String, reason: String },
    #[error("composition needs {needed} nonterminals but the limit is {max}")]
    CompositionOverflow { needed: usize, max: usize },
    #[error("nonterminal index {0} does not occur on the input side of the outer rule")]
    BadIndex(u8),
    #[error("chart capacity of {limit} items exceeded")]
    Capacity { limit: usize },
    #[error("rule `{0}` is not in the grammar")]
    UnknownRule(String),
    #[error("unknown expansion context")]
    UnknownContext,
    #[error("parameters were fitted for a different grammar")]
    GrammarMismatch,
    #[error("input is not derivable; the conditional is undefined")]
    UndefinedConditional,
    #[error("{path}:{line}: {message}")]
    Format {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("length mismatch: {predictions} predictions for {gold} gold examples")]
    LengthMismatch { predictions: usize, gold: usize },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("sampling aborted: accepted {accepted} of {attempts} attempts ({depth_rejects} over depth, {dead_ends} dead ends)")]
    SamplerAbort {
        accepted: usize,
        attempts: usize,
        depth_rejects: usize,
        dead_ends: usize,
    },
}

impl Error {
    /// True for errors caused by resource limits rather than bad data.
    pub fn is_capacity(&self) -> bool {
        matches!(self, Error::Capacity { .. } | Error::SamplerAbort { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
