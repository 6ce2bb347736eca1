use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate entry id `{0}`")]
    DuplicateId(String),

    #[error("template `{template}` has no binding for placeholder(s) {missing:?}")]
    MissingBindings { template: String, missing: Vec<usize> },

    #[error("invalid template `{template}`: {message}")]
    InvalidTemplate { template: String, message: String },

    #[error("placeholder <{placeholder}> (`{label}`) cannot be located in question `{question}`")]
    PlaceholderNotFound {
        placeholder: usize,
        label: String,
        question: String,
    },

    #[error("entry `{0}` has no reformulated question")]
    MissingReformulation(String),

    #[error("entry `{0}` has not been enriched with gold answers")]
    NotEnriched(String),

    #[error("instruction prompts require a tag-end annotated question")]
    PromptScheme,

    #[error("unterminated string literal starting at offset {offset}")]
    UnterminatedString { offset: usize },

    #[error("`{0}` is not a URI-shaped token")]
    NotAUri(String),

    #[error("query token `{0}` is neither a SPARQL vocabulary token nor a KB element")]
    UnclassifiableToken(String),

    #[error("`{0}` is not a KB token and cannot be masked")]
    NotKbToken(String),

    #[error("token id {id} is outside the vocabulary (size {size})")]
    IdOutOfRange { id: usize, size: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("distribution `{name}` sums to {sum}, expected 1")]
    NotNormalized { name: &'static str, sum: f64 },

    #[error("entry `{entry}`: gold token `{token}` is neither generable nor a copy candidate")]
    UncoveredTarget { entry: String, token: String },

    #[error("endpoint unreachable: {0}")]
    Unreachable(String),

    #[error("fixture query error: {0}")]
    Query(String),

    #[error("run reports cover different test subsets")]
    MismatchedReports,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("backend `{0}` is not available in this build")]
    UnsupportedBackend(String),

    #[error("training stopped after epoch {0}")]
    Interrupted(usize),

    #[error("no predictions to evaluate")]
    NoPredictions,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
