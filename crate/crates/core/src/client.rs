//! Minimal client for a text-completion HTTP endpoint.
//!
//! The request is a single `POST` to the configured URL with body
//! `{"model": ..., "prompt": ...}` and, when a key is set, an
//! `Authorization: Bearer` header. The completion is read from the first of
//! `completion`, `text`, `choices[0].text` or `choices[0].message.content`
//! found in a JSON response; a non-JSON body is returned as is.

use std::time::Duration;

use serde_json::{json, Value};
use thiserror::Error;

pub const API_KEY_VAR: &str = "ALGOPILOT_API_KEY";

/// Returned in offline mode instead of contacting the endpoint.
pub const OFFLINE_COMPLETION: &str = "def sort_actions(a):\n    n = len(a)\n    for i in range(n - 1):\n        for j in range(n - i - 1):\n            compare(j, j + 1)\n            if a[j] > a[j + 1]:\n                swap(j, j + 1)\n";

#[derive(Debug, Clone, PartialEq)]
pub struct EndpointConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
    /// Extra attempts after a network failure, timeout or 5xx response.
    pub max_retries: u32,
    pub offline: bool,
}

impl EndpointConfig {
    /// Config with the key taken from `ALGOPILOT_API_KEY`, 30 s timeout and
    /// two retries.
    pub fn from_env(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        EndpointConfig {
            base_url: base_url.into(),
            api_key: std::env::var(API_KEY_VAR).ok().filter(|k| !k.is_empty()),
            model: model.into(),
            timeout: Duration::from_secs(30),
            max_retries: 2,
            offline: false,
        }
    }

    pub fn offline() -> Self {
        EndpointConfig {
            base_url: String::new(),
            api_key: None,
            model: String::new(),
            timeout: Duration::from_secs(1),
            max_retries: 0,
            offline: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClientError {
    #[error("network failure: {0}")]
    NetworkFailure(String),
    #[error("endpoint rejected the credential (HTTP {0})")]
    AuthFailure(u16),
    #[error("request timed out")]
    Timeout,
    #[error("endpoint returned HTTP {status}: {body}")]
    HttpStatus { status: u16, body: String },
}

impl ClientError {
    fn retryable(&self) -> bool {
        match self {
            ClientError::NetworkFailure(_) | ClientError::Timeout => true,
            ClientError::HttpStatus { status, .. } => *status >= 500,
            ClientError::AuthFailure(_) => false,
        }
    }
}

pub fn synthesize_program(config: &EndpointConfig, prompt: &str) -> Result<String, ClientError> {
    if config.offline {
        return Ok(OFFLINE_COMPLETION.to_string());
    }
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(config.timeout))
        .http_status_as_error(false)
        .build()
        .into();
    let body = json!({ "model": config.model, "prompt": prompt }).to_string();
    let mut attempt = 0;
    loop {
        match send_once(&agent, config, &body) {
            Err(e) if e.retryable() && attempt < config.max_retries => attempt += 1,
            other => return other,
        }
    }
}

fn send_once(agent: &ureq::Agent, config: &EndpointConfig, body: &str) -> Result<String, ClientError> {
    let mut req = agent.post(&config.base_url).header("Content-Type", "application/json");
    if let Some(key) = &config.api_key {
        req = req.header("Authorization", format!("Bearer {key}"));
    }
    let mut resp = req.send(body).map_err(classify)?;
    let status = resp.status().as_u16();
    let text = resp.body_mut().read_to_string().map_err(classify)?;
    match status {
        200..=299 => Ok(extract_completion(&text)),
        401 | 403 => Err(ClientError::AuthFailure(status)),
        _ => Err(ClientError::HttpStatus { status, body: text }),
    }
}

fn classify(e: ureq::Error) -> ClientError {
    match e {
        ureq::Error::Timeout(_) => ClientError::Timeout,
        ureq::Error::Io(io) if matches!(io.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock) => {
            ClientError::Timeout
        }
        other => ClientError::NetworkFailure(other.to_string()),
    }
}

fn extract_completion(text: &str) -> String {
    let Ok(v) = serde_json::from_str::<Value>(text) else {
        return text.to_string();
    };
    let found = [
        v.get("completion"),
        v.get("text"),
        v.pointer("/choices/0/text"),
        v.pointer("/choices/0/message/content"),
    ]
    .into_iter()
    .flatten()
    .find_map(|c| c.as_str().map(str::to_string));
    found.unwrap_or_else(|| text.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn completion_fields() {
        assert_eq!(extract_completion(r#"{"completion":"a"}"#), "a");
        assert_eq!(extract_completion(r#"{"choices":[{"text":"b"}]}"#), "b");
        assert_eq!(extract_completion(r#"{"choices":[{"message":{"content":"c"}}]}"#), "c");
        assert_eq!(extract_completion("plain"), "plain");
    }

    #[test]
    fn offline_mode() {
        assert_eq!(synthesize_program(&EndpointConfig::offline(), "x").unwrap(), OFFLINE_COMPLETION);
    }
}
