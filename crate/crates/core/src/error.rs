use std::ops::Range;

use thiserror::Error;

use crate::code::Lang;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to load the {0} grammar: {1}")]
    InternalGrammarFailure(Lang, String),

    #[error("rewrites overlap at byte ranges {0:?} and {1:?}")]
    OverlappingRewrites(Range<usize>, Range<usize>),

    #[error("rewrite span {span:?} is outside the {len}-byte text or splits a character")]
    SpanOutOfBounds { span: Range<usize>, len: usize },

    #[error("input does not parse as {0}")]
    ParseErrorInput(Lang),

    #[error("transform site is stale: the unit no longer matches at {0:?}")]
    StaleSite(Range<usize>),

    #[error("no mutable operator site")]
    NoMutableSite,

    #[error("record {0} was selected for mutation but carries no tests")]
    MissingTests(String),

    #[error("length mismatch: {0} values vs {1} labels")]
    LengthMismatch(usize, usize),

    #[error("empty input")]
    EmptyInput,

    #[error("embedding is the zero vector")]
    ZeroEmbedding,

    #[error("vector dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("invalid reference {id}: {reason}")]
    InvalidReference { id: String, reason: String },

    #[error("embedding backend failed: {0}")]
    BackendFailure(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("protocol mismatch: {0}")]
    ProtocolMismatch(String),

    #[error("no runtime available for {0}: {1}")]
    RuntimeUnavailable(Lang, String),

    #[error("sandbox failure: {0}")]
    SandboxFailure(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence {
        epoch: usize,
        last_good: Box<crate::encoder::EncoderModel>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("malformed corpus line {line}: {reason}")]
    Corpus { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the caller supplied something unusable (a bad file, flag or
    /// record) rather than the toolkit or an external service failing.
    pub fn is_input(&self) -> bool {
        matches!(
            self,
            Error::ParseErrorInput(_)
                | Error::StaleSite(_)
                | Error::NoMutableSite
                | Error::MissingTests(_)
                | Error::LengthMismatch(..)
                | Error::EmptyInput
                | Error::InvalidReference { .. }
                | Error::Config(_)
                | Error::Checkpoint(_)
                | Error::Corpus { .. }
                | Error::Io(_)
                | Error::Json(_)
        )
    }
}
