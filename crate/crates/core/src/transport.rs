//! JSON-over-HTTP plumbing shared by remote embedding and generation
//! providers: a swappable [`Transport`], retry with exponential backoff, and
//! the provider error type.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("network error: {0}")]
    Network(String),
    #[error("http status {code}: {body}")]
    Status { code: u16, body: String },
    #[error("undecodable response: {0}")]
    Decode(String),
}

impl TransportError {
    pub fn is_retryable(&self) -> bool {
        match self {
            Self::Network(_) => true,
            Self::Status { code, .. } => *code == 429 || *code >= 500,
            Self::Decode(_) => false,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("provider {provider}: request failed after {attempts} attempt(s): {source}")]
    Transport {
        provider: String,
        attempts: u32,
        #[source]
        source: TransportError,
    },
    #[error("provider {provider} returned an error: {message}")]
    Remote { provider: String, message: String },
    #[error("provider {provider}: malformed response: {message}")]
    Format { provider: String, message: String },
    #[error("provider {provider}: expected dimension {expected}, got {got}")]
    DimensionMismatch {
        provider: String,
        expected: usize,
        got: usize,
    },
    #[error("provider {provider} is not configured: {message}")]
    Unconfigured { provider: String, message: String },
    #[error("provider {provider}: invalid input: {message}")]
    InvalidInput { provider: String, message: String },
}

/// Sends one JSON POST and returns the decoded JSON body.
pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &Value,
        timeout: Duration,
    ) -> Result<Value, TransportError>;
}

/// Blocking HTTP transport.
#[derive(Debug, Default, Clone)]
pub struct HttpTransport;

impl Transport for HttpTransport {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &Value,
        timeout: Duration,
    ) -> Result<Value, TransportError> {
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        let mut req = agent.post(url).set("Content-Type", "application/json");
        if let Some(token) = bearer {
            req = req.set("Authorization", &format!("Bearer {token}"));
        }
        match req.send_json(body) {
            Ok(resp) => resp
                .into_json::<Value>()
                .map_err(|e| TransportError::Decode(e.to_string())),
            Err(ureq::Error::Status(code, resp)) => Err(TransportError::Status {
                code,
                body: resp.into_string().unwrap_or_default(),
            }),
            Err(ureq::Error::Transport(t)) => Err(TransportError::Network(t.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Delay before the second attempt; doubles on every further attempt.
    pub backoff_base_ms: u64,
    pub timeout_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            backoff_base_ms: 500,
            timeout_ms: 60_000,
        }
    }
}

impl RetryPolicy {
    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    pub fn backoff(&self, failed_attempt: u32) -> Duration {
        let factor = 1u64 << failed_attempt.saturating_sub(1).min(16);
        Duration::from_millis(self.backoff_base_ms.saturating_mul(factor))
    }

    /// Runs `call` until it succeeds, fails with a non-retryable error, or
    /// the attempt budget is spent. Returns the value and the attempts used.
    pub fn run<T>(
        &self,
        provider: &str,
        mut call: impl FnMut() -> Result<T, TransportError>,
    ) -> Result<(T, u32), ProviderError> {
        let max = self.max_attempts.max(1);
        let mut attempt = 1;
        loop {
            match call() {
                Ok(v) => return Ok((v, attempt)),
                Err(e) if e.is_retryable() && attempt < max => {
                    thread::sleep(self.backoff(attempt));
                    attempt += 1;
                }
                Err(source) => {
                    return Err(ProviderError::Transport {
                        provider: provider.to_string(),
                        attempts: attempt,
                        source,
                    })
                }
            }
        }
    }
}

/// Reads a bearer token from the named environment variable, if one is
/// configured.
pub fn bearer_from_env(provider: &str, var: Option<&str>) -> Result<Option<String>, ProviderError> {
    match var {
        None => Ok(None),
        Some(name) => std::env::var(name).map(Some).map_err(|_| ProviderError::Unconfigured {
            provider: provider.to_string(),
            message: format!("environment variable {name} is not set"),
        }),
    }
}

/// Surfaces `{"error": ...}` payloads as [`ProviderError::Remote`].
pub fn check_error_payload(provider: &str, body: &Value) -> Result<(), ProviderError> {
    match body.get("error") {
        None | Some(Value::Null) => Ok(()),
        Some(err) => {
            let message = err
                .get("message")
                .and_then(Value::as_str)
                .map(str::to_string)
                .unwrap_or_else(|| err.to_string());
            Err(ProviderError::Remote {
                provider: provider.to_string(),
                message,
            })
        }
    }
}
