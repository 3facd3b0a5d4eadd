//! JSON-over-HTTP client implementations.
//!
//! Chat request shape: `{model, messages: [{role, content}], temperature}`.
//! Embedding request shape: `{model, input: [string]}`.
//! Response locations are configurable JSON paths; the defaults match the
//! common `choices[0].message.content` / `data[*].embedding` layout.

use serde_json::json;

use super::{
    parse_chat_completion, parse_embedding_response, with_backoff, ChatClient, EmbedClient,
    RetryPolicy,
};
use crate::error::{Error, Result};

fn classify(endpoint: &str, err: ureq::Error) -> Error {
    let transient = match &err {
        ureq::Error::StatusCode(code) => matches!(code, 408 | 429 | 500 | 502 | 503 | 504),
        ureq::Error::Timeout(_)
        | ureq::Error::Io(_)
        | ureq::Error::ConnectionFailed
        | ureq::Error::HostNotFound => true,
        _ => false,
    };
    if transient {
        Error::Transport {
            endpoint: endpoint.to_string(),
            attempts: 1,
            message: err.to_string(),
            prompt: None,
        }
    } else {
        Error::Protocol(format!("{endpoint}: {err}"))
    }
}

fn post_json(
    agent: &ureq::Agent,
    endpoint: &str,
    api_key: Option<&str>,
    body: &serde_json::Value,
) -> Result<Vec<u8>> {
    let mut req = agent.post(endpoint);
    if let Some(key) = api_key {
        req = req.header("Authorization", &format!("Bearer {key}"));
    }
    let resp = req.send_json(body).map_err(|e| classify(endpoint, e))?;
    let mut reader = resp.into_body().into_reader();
    let mut bytes = Vec::new();
    std::io::Read::read_to_end(&mut reader, &mut bytes)?;
    Ok(bytes)
}

pub struct HttpChatClient {
    endpoint: String,
    model: String,
    temperature: f64,
    api_key: Option<String>,
    response_path: String,
    retry: RetryPolicy,
    agent: ureq::Agent,
}

impl HttpChatClient {
    /// Temperature defaults to 0 for reproducibility; the API key is taken
    /// from `CHAT_API_KEY` when set.
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        HttpChatClient {
            endpoint: endpoint.into(),
            model: model.into(),
            temperature: 0.0,
            api_key: std::env::var("CHAT_API_KEY").ok(),
            response_path: "choices.0.message.content".into(),
            retry: RetryPolicy::default(),
            agent: ureq::Agent::new_with_defaults(),
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_response_path(mut self, path: impl Into<String>) -> Self {
        self.response_path = path.into();
        self
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }
}

impl ChatClient for HttpChatClient {
    fn complete(&self, prompt: &str) -> Result<String> {
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
        });
        let bytes = with_backoff(&self.retry, || {
            post_json(&self.agent, &self.endpoint, self.api_key.as_deref(), &body)
        })?;
        parse_chat_completion(&bytes, &self.response_path)
    }

    fn kind(&self) -> &'static str {
        "http"
    }
}

pub struct HttpEmbedClient {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    items_path: String,
    vector_path: String,
    retry: RetryPolicy,
    agent: ureq::Agent,
}

impl HttpEmbedClient {
    /// The API key is taken from `EMBED_API_KEY` when set.
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        HttpEmbedClient {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: std::env::var("EMBED_API_KEY").ok(),
            items_path: "data".into(),
            vector_path: "embedding".into(),
            retry: RetryPolicy::default(),
            agent: ureq::Agent::new_with_defaults(),
        }
    }

    pub fn with_paths(mut self, items_path: impl Into<String>, vector_path: impl Into<String>) -> Self {
        self.items_path = items_path.into();
        self.vector_path = vector_path.into();
        self
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }
}

impl EmbedClient for HttpEmbedClient {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        let body = json!({
            "model": self.model,
            "input": texts,
        });
        let bytes = with_backoff(&self.retry, || {
            post_json(&self.agent, &self.endpoint, self.api_key.as_deref(), &body)
        })?;
        let vectors = parse_embedding_response(&bytes, &self.items_path, &self.vector_path)?;
        if vectors.len() != texts.len() {
            return Err(Error::Protocol(format!(
                "asked for {} embeddings, got {}",
                texts.len(),
                vectors.len()
            )));
        }
        Ok(vectors)
    }

    fn kind(&self) -> &'static str {
        "http"
    }
}
