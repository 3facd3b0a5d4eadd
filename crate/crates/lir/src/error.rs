//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A behavior was routed to a state belonging to a different user.
    #[error("identity mismatch: state belongs to `{expected}`, behavior belongs to `{got}`")]
    IdentityMismatch { expected: String, got: String },

    /// An operation received an input it cannot meaningfully act on
    /// (empty cache, empty representation list, ...).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Transport-level client failure. Retried internally; this surfaces
    /// once retries are exhausted. `prompt` carries the request text when
    /// the failure happened on a chat call.
    #[error("transport failure talking to {endpoint} after {attempts} attempt(s): {message}")]
    Transport {
        endpoint: String,
        attempts: u32,
        message: String,
        prompt: Option<String>,
    },

    /// The remote side answered, but not with what the wire contract
    /// promises (empty completion, missing JSON path, ragged vectors).
    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Unparseable dataset content. `line` is 1-based when known.
    #[error("data error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Data { line: Option<usize>, message: String },

    /// Corrupt or truncated binary artifact (store, checkpoint, projection).
    #[error("format error: {0}")]
    Format(String),

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn data(line: usize, message: impl Into<String>) -> Self {
        Error::Data {
            line: Some(line),
            message: message.into(),
        }
    }

    /// Whether the failure is worth retrying (transient transport trouble).
    pub fn is_transient(&self) -> bool {
        matches!(self, Error::Transport { .. })
    }
}
