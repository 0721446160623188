use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("path not found: {}", .0.display())]
    NotFound(PathBuf),

    #[error("column not found: {0}")]
    ColumnNotFound(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config error: {0}")]
    Config(String),

    #[error("git error: {0}")]
    Git(String),

    #[error("prompt lint failed: {0}")]
    Lint(String),

    #[error("missing placeholder field `{placeholder}` on item {item_id}")]
    MissingField { placeholder: String, item_id: String },

    #[error("authentication failed for model {model_id}: {detail}")]
    Auth { model_id: String, detail: String },

    #[error("retries exhausted for model {model_id} after {attempts} attempts (last status: {last_status})")]
    RetriesExhausted {
        model_id: String,
        attempts: u32,
        last_status: String,
    },

    #[error("prompt for item {item_id} needs ~{estimated} tokens, over the {limit}-token context limit of {model_id}")]
    PromptTooLong {
        model_id: String,
        item_id: String,
        estimated: u64,
        limit: u64,
    },

    #[error("provider error for model {model_id}: {detail}")]
    Provider { model_id: String, detail: String },

    #[error("annotation item sets differ; only in A: {only_a:?}, only in B: {only_b:?}")]
    MismatchedItems {
        only_a: Vec<String>,
        only_b: Vec<String>,
    },

    #[error("duplicate provenance record (run {run_id}, model {model_id}, item {item_id})")]
    DuplicateRecord {
        run_id: String,
        model_id: String,
        item_id: String,
    },

    #[error("unknown run: {0}")]
    UnknownRun(String),

    #[error("round is closed: {0}")]
    RoundClosed(u32),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
