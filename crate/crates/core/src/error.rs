use thiserror::Error;

use crate::taxonomy::RuleViolation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: malformed record: {message}")]
    MalformedRecord { line: usize, message: String },

    #[error("line {line}: unsupported schema version {found} (expected {expected})")]
    UnsupportedSchema { line: usize, found: u64, expected: u64 },

    #[error("unknown label `{0}`")]
    UnknownLabel(String),

    #[error("label registry: {0}")]
    Registry(String),

    #[error("line {line}: degenerate box [{x1}, {y1}, {x2}, {y2}]")]
    DegenerateBox {
        line: usize,
        x1: f64,
        y1: f64,
        x2: f64,
        y2: f64,
    },

    #[error("line {line}: prompt `{prompt_id}`: {}", match .tokens {
        Some(n) => format!("{} logits but the token map has {} tokens", .logits, n),
        None => format!("{} logits but no token map exists for this prompt", .logits),
    })]
    TokenLengthMismatch {
        line: usize,
        prompt_id: String,
        logits: usize,
        tokens: Option<usize>,
    },

    #[error("line {line}: logit {index} = {value} is outside [0, 1]")]
    LogitOutOfRange { line: usize, index: usize, value: f64 },

    #[error("line {line}: duplicate prompt id `{prompt_id}`")]
    DuplicatePromptId { line: usize, prompt_id: String },

    #[error("prompt `{prompt_id}` is not in the prompt catalog")]
    UnknownPrompt { prompt_id: String },

    #[error("line {line}: synonym group `{group}` mixes label sets")]
    InconsistentSynonymGroup { line: usize, group: String },

    #[error("token map `{prompt_id}`: expected token index {expected}, found {found}")]
    NonContiguousIndices {
        prompt_id: String,
        expected: usize,
        found: usize,
    },

    #[error("line {line}: duplicate token map for prompt `{prompt_id}`")]
    DuplicateTokenMap { line: usize, prompt_id: String },

    #[error("{} sanity rule violation(s), first: {}", .0.len(), .0.first().map(|v| v.to_string()).unwrap_or_default())]
    SanityViolations(Vec<RuleViolation>),

    #[error("no token of prompt `{0}` carries a category")]
    EmptySelection(String),

    #[error("cannot aggregate an empty logit vector")]
    EmptyVector,

    #[error("prediction has no native score")]
    MissingNativeScore,

    #[error("label set has no condition label")]
    MissingCondition,

    #[error("label set has no state label")]
    MissingState,

    #[error("no template covers label combination `{0}`")]
    NoTemplateForLevel(String),

    #[error("template: {0}")]
    Template(String),

    #[error("instance has {found} boxes, oracle limit is {limit}")]
    SizeLimitExceeded { found: usize, limit: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Whether the error stems from bad input, as opposed to an internal failure.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Io(_))
    }
}
