//! Pluggable chat-completion and text-embedding clients.
//!
//! The pipeline only ever talks to the two traits below. Production runs use
//! the JSON-over-HTTP implementations in [`http`]; tests and desk-scale runs
//! use the deterministic mocks in [`mock`].

mod http;
mod mock;

pub use http::{HttpChatClient, HttpEmbedClient};
pub use mock::{MockChatClient, MockEmbedClient};

use std::thread::sleep;
use std::time::Duration;

use crate::error::{Error, Result};

/// A chat-completion backend. Implementations must be safe for concurrent
/// calls from multiple user pipelines.
pub trait ChatClient: Send + Sync {
    /// Returns the completion text for a fully rendered prompt.
    fn complete(&self, prompt: &str) -> Result<String>;

    /// Short identifier recorded in run metadata ("mock", "http").
    fn kind(&self) -> &'static str;
}

/// A text-embedding backend returning one fixed-dimension vector per input.
pub trait EmbedClient: Send + Sync {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>>;

    fn kind(&self) -> &'static str;
}

/// Exponential backoff for transient transport failures.
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    /// Retries after the initial attempt.
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay: Duration::from_millis(100),
        }
    }
}

impl RetryPolicy {
    /// No waiting between attempts; used by tests.
    pub fn immediate(max_retries: u32) -> Self {
        RetryPolicy {
            max_retries,
            base_delay: Duration::ZERO,
        }
    }
}

/// Runs `op`, retrying transient failures with exponential backoff. A
/// successful completion is never retried. The surfaced error carries the
/// total attempt count.
pub fn with_backoff<T>(policy: &RetryPolicy, mut op: impl FnMut() -> Result<T>) -> Result<T> {
    let mut attempt = 0u32;
    loop {
        attempt += 1;
        match op() {
            Ok(v) => return Ok(v),
            Err(e) if e.is_transient() && attempt <= policy.max_retries => {
                if !policy.base_delay.is_zero() {
                    sleep(policy.base_delay * 2u32.saturating_pow(attempt - 1));
                }
            }
            Err(e) => {
                return Err(match e {
                    Error::Transport {
                        endpoint,
                        message,
                        prompt,
                        ..
                    } => Error::Transport {
                        endpoint,
                        attempts: attempt,
                        message,
                        prompt,
                    },
                    other => other,
                });
            }
        }
    }
}

/// Walks a dotted path through a JSON value. Numeric segments index arrays;
/// everything else is treated as an object key. An empty path returns the
/// value itself.
pub fn json_path<'a>(value: &'a serde_json::Value, path: &str) -> Option<&'a serde_json::Value> {
    if path.is_empty() {
        return Some(value);
    }
    let mut cur = value;
    for seg in path.split('.') {
        cur = match seg.parse::<usize>() {
            Ok(i) => cur.as_array()?.get(i)?,
            Err(_) => cur.as_object()?.get(seg)?,
        };
    }
    Some(cur)
}

/// Pulls the completion text out of a chat response body.
pub fn parse_chat_completion(body: &[u8], path: &str) -> Result<String> {
    let value: serde_json::Value = serde_json::from_slice(body)
        .map_err(|e| Error::Protocol(format!("chat response is not valid JSON: {e}")))?;
    let node = json_path(&value, path)
        .ok_or_else(|| Error::Protocol(format!("chat response has no node at path `{path}`")))?;
    let text = node
        .as_str()
        .ok_or_else(|| Error::Protocol(format!("node at `{path}` is not a string")))?;
    Ok(text.to_string())
}

/// Pulls the embedding vectors out of an embedding response body.
/// `items_path` locates the per-input array; `vector_path` locates the
/// vector inside each item (empty when the item *is* the vector).
pub fn parse_embedding_response(
    body: &[u8],
    items_path: &str,
    vector_path: &str,
) -> Result<Vec<Vec<f64>>> {
    let value: serde_json::Value = serde_json::from_slice(body)
        .map_err(|e| Error::Protocol(format!("embedding response is not valid JSON: {e}")))?;
    let items = json_path(&value, items_path)
        .and_then(|v| v.as_array())
        .ok_or_else(|| {
            Error::Protocol(format!("embedding response has no array at `{items_path}`"))
        })?;
    let mut out = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let vec_node = json_path(item, vector_path).and_then(|v| v.as_array()).ok_or_else(|| {
            Error::Protocol(format!("embedding item {i} has no vector at `{vector_path}`"))
        })?;
        let mut vector = Vec::with_capacity(vec_node.len());
        for v in vec_node {
            let f = v
                .as_f64()
                .ok_or_else(|| Error::Protocol(format!("embedding item {i} holds a non-number")))?;
            if !f.is_finite() {
                return Err(Error::Protocol(format!(
                    "embedding item {i} holds a non-finite value"
                )));
            }
            vector.push(f);
        }
        out.push(vector);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    fn transient(msg: &str) -> Error {
        Error::Transport {
            endpoint: "test".into(),
            attempts: 1,
            message: msg.into(),
            prompt: None,
        }
    }

    #[test]
    fn backoff_recovers_after_transient_failures() {
        let calls = AtomicU32::new(0);
        let policy = RetryPolicy::immediate(3);
        let out = with_backoff(&policy, || {
            if calls.fetch_add(1, Ordering::SeqCst) < 2 {
                Err(transient("flaky"))
            } else {
                Ok(42)
            }
        })
        .unwrap();
        assert_eq!(out, 42);
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn backoff_gives_up_and_reports_attempts() {
        let policy = RetryPolicy::immediate(3);
        let err = with_backoff::<()>(&policy, || Err(transient("down"))).unwrap_err();
        match err {
            Error::Transport { attempts, .. } => assert_eq!(attempts, 4),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn backoff_does_not_retry_terminal_errors() {
        let calls = AtomicU32::new(0);
        let policy = RetryPolicy::immediate(3);
        let err = with_backoff::<()>(&policy, || {
            calls.fetch_add(1, Ordering::SeqCst);
            Err(Error::Protocol("bad response".into()))
        })
        .unwrap_err();
        assert!(matches!(err, Error::Protocol(_)));
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn chat_completion_default_shape() {
        let body = br#"{"choices":[{"message":{"role":"assistant","content":"hello"}}]}"#;
        let text = parse_chat_completion(body, "choices.0.message.content").unwrap();
        assert_eq!(text, "hello");
    }

    #[test]
    fn chat_completion_missing_path_is_protocol_error() {
        let body = br#"{"choices":[]}"#;
        assert!(matches!(
            parse_chat_completion(body, "choices.0.message.content").unwrap_err(),
            Error::Protocol(_)
        ));
    }

    #[test]
    fn embedding_default_shape() {
        let body = br#"{"data":[{"embedding":[1.0,2.0]},{"embedding":[3.0,4.0]}]}"#;
        let vecs = parse_embedding_response(body, "data", "embedding").unwrap();
        assert_eq!(vecs, vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
    }

    #[test]
    fn embedding_bare_vectors() {
        let body = br#"{"vectors":[[1.0],[2.0]]}"#;
        let vecs = parse_embedding_response(body, "vectors", "").unwrap();
        assert_eq!(vecs, vec![vec![1.0], vec![2.0]]);
    }

    #[test]
    fn embedding_rejects_non_finite() {
        let body = br#"{"data":[{"embedding":[1e999]}]}"#;
        assert!(parse_embedding_response(body, "data", "embedding").is_err());
    }
}
