use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input was not well-formed JSON (or did not match the schema shape).
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    /// Input parsed but broke a structural invariant.
    #[error("validation error in document {doc_id:?}: {rule} at index {index}: {detail}")]
    Validation {
        doc_id: String,
        rule: &'static str,
        index: usize,
        detail: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{0}")]
    Graph(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training aborted: {0}")]
    Training(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn validation(
        doc_id: &str,
        rule: &'static str,
        index: usize,
        detail: impl Into<String>,
    ) -> Self {
        Error::Validation {
            doc_id: doc_id.to_string(),
            rule,
            index,
            detail: detail.into(),
        }
    }
}
