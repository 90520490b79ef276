use thiserror::Error;

pub type Result<T> = std::result::Result<T, VmlError>;

#[derive(Debug, Error)]
pub enum VmlError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),

    #[error("provider error (status {status}): {message}")]
    ProviderError { status: u16, message: String },

    #[error("malformed provider response: {0}")]
    MalformedProviderResponse(String),

    #[error("script exhausted after {calls} calls")]
    ScriptExhausted { calls: usize },

    #[error("prompt mismatch at call {index}:\n{diff}")]
    PromptMismatch { index: usize, diff: String },

    #[error("oracle cannot interpret: {0}")]
    OracleCannotInterpret(String),

    #[error("optimizer parse failure: {0}")]
    OptimizerParseFailure(String),

    #[error("ingestion error at line {line}: {message}")]
    Ingestion { line: usize, message: String },

    #[error("ensemble failure: all {samples} samples were unparseable")]
    EnsembleFailure { samples: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("corrupt run log at line {line}: {message}")]
    CorruptLog { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl VmlError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        VmlError::InvalidArgument(msg.into())
    }

    /// True for failures caused by the backend rather than the caller.
    pub fn is_backend(&self) -> bool {
        matches!(
            self,
            VmlError::BackendUnavailable(_)
                | VmlError::ProviderError { .. }
                | VmlError::MalformedProviderResponse(_)
                | VmlError::ScriptExhausted { .. }
                | VmlError::PromptMismatch { .. }
                | VmlError::OracleCannotInterpret(_)
        )
    }
}
