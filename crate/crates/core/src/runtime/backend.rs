use std::fmt;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

use crate::problem::Attachment;

pub const DEFAULT_MODEL: &str = "o4-mini";
pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Remote,
    Simulated,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReasoningEffort {
    Low,
    Medium,
    #[default]
    High,
}

impl ReasoningEffort {
    pub fn as_str(&self) -> &'static str {
        match self {
            ReasoningEffort::Low => "low",
            ReasoningEffort::Medium => "medium",
            ReasoningEffort::High => "high",
        }
    }
}

impl fmt::Display for ReasoningEffort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    #[serde(rename = "base_backoff_ms", with = "millis")]
    pub base_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_backoff: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (1-based): doubles each time, capped at 64x.
    pub fn backoff(&self, attempt: u32) -> Duration {
        self.base_backoff * 2u32.pow(attempt.saturating_sub(1).min(6))
    }
}

/// Backend settings. Loadable from a TOML file whose keys mirror the fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub model_id: String,
    pub reasoning_effort: ReasoningEffort,
    /// Base URL of an OpenAI-compatible API; `/chat/completions` is appended.
    pub endpoint: Option<Url>,
    pub max_parallel: usize,
    pub retry: RetryPolicy,
    #[serde(rename = "request_timeout_ms", with = "millis")]
    pub request_timeout: Duration,
    /// Sampling temperature; the backend default applies when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f32>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Remote,
            model_id: DEFAULT_MODEL.into(),
            reasoning_effort: ReasoningEffort::High,
            endpoint: None,
            max_parallel: 4,
            retry: RetryPolicy::default(),
            request_timeout: Duration::from_secs(600),
            temperature: None,
        }
    }
}

impl BackendConfig {
    pub fn simulated() -> Self {
        Self {
            kind: BackendKind::Simulated,
            model_id: "simulated".into(),
            retry: RetryPolicy {
                max_attempts: 3,
                base_backoff: Duration::from_millis(1),
            },
            request_timeout: Duration::from_secs(30),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.max_parallel == 0 {
            return Err("max_parallel must be at least 1".into());
        }
        if self.retry.max_attempts == 0 {
            return Err("retry.max_attempts must be at least 1".into());
        }
        if self.model_id.trim().is_empty() {
            return Err("model_id must not be empty".into());
        }
        if self.request_timeout.is_zero() {
            return Err("request_timeout_ms must be positive".into());
        }
        Ok(())
    }

    pub fn endpoint_or_default(&self) -> Url {
        self.endpoint
            .clone()
            .unwrap_or_else(|| Url::parse(DEFAULT_ENDPOINT).expect("valid default endpoint"))
    }

    pub fn from_toml(text: &str) -> Result<Self, String> {
        let config: BackendConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentRole {
    Solve,
    Compare,
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AgentRole::Solve => "solve",
            AgentRole::Compare => "compare",
        })
    }
}

/// One stateless request. Every call carries a fresh `session_id`; backends
/// must not let one session observe another.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub session_id: String,
    pub role: AgentRole,
    /// Realization index for solve calls.
    pub index: Option<usize>,
    pub system_text: String,
    /// User message parts, sent in order.
    pub user_parts: Vec<String>,
    pub attachments: Vec<Attachment>,
    pub model_id: String,
    pub reasoning_effort: ReasoningEffort,
    pub temperature: Option<f32>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChatResponse {
    pub text: String,
    pub model: Option<String>,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("backend returned an empty response")]
    EmptyResponse,
    #[error("malformed backend response: {0}")]
    Malformed(String),
    #[error("backend misconfigured: {0}")]
    Config(String),
    #[error("injected failure: {0}")]
    Injected(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) | BackendError::Timeout(_) | BackendError::Injected(_) => {
                true
            }
            BackendError::Http { status, .. } => *status == 429 || *status >= 500,
            BackendError::EmptyResponse | BackendError::Malformed(_) | BackendError::Config(_) => {
                false
            }
        }
    }
}

/// A chat-completion model. Implementations must tolerate concurrent calls.
#[async_trait]
pub trait ModelBackend: Send + Sync {
    async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;

    fn name(&self) -> &str;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_from_toml() {
        let text = r#"
            kind = "remote"
            model_id = "gpt-5"
            reasoning_effort = "medium"
            endpoint = "http://localhost:8080/v1"
            max_parallel = 2
            request_timeout_ms = 1500

            [retry]
            max_attempts = 5
            base_backoff_ms = 10
        "#;
        let c = BackendConfig::from_toml(text).unwrap();
        assert_eq!(c.model_id, "gpt-5");
        assert_eq!(c.reasoning_effort, ReasoningEffort::Medium);
        assert_eq!(c.max_parallel, 2);
        assert_eq!(c.retry.max_attempts, 5);
        assert_eq!(c.retry.base_backoff, Duration::from_millis(10));
        assert_eq!(c.request_timeout, Duration::from_millis(1500));
        assert_eq!(c.endpoint.unwrap().as_str(), "http://localhost:8080/v1");
    }

    #[test]
    fn partial_toml_uses_defaults() {
        let c = BackendConfig::from_toml("model_id = \"x\"").unwrap();
        assert_eq!(c.max_parallel, 4);
        assert_eq!(c.reasoning_effort, ReasoningEffort::High);
        assert!(BackendConfig::from_toml("max_parallel = 0").is_err());
        assert!(BackendConfig::from_toml("[retry]\nmax_attempts = 0").is_err());
    }

    #[test]
    fn backoff_doubles() {
        let r = RetryPolicy {
            max_attempts: 4,
            base_backoff: Duration::from_millis(100),
        };
        assert_eq!(r.backoff(1), Duration::from_millis(100));
        assert_eq!(r.backoff(3), Duration::from_millis(400));
        assert_eq!(r.backoff(40), Duration::from_millis(6400));
    }

    #[test]
    fn retryable_classification() {
        assert!(BackendError::Http {
            status: 503,
            body: String::new()
        }
        .is_retryable());
        assert!(BackendError::Http {
            status: 429,
            body: String::new()
        }
        .is_retryable());
        assert!(!BackendError::Http {
            status: 401,
            body: String::new()
        }
        .is_retryable());
        assert!(!BackendError::EmptyResponse.is_retryable());
    }
}
