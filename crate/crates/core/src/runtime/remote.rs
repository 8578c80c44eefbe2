//! OpenAI-compatible chat-completions backend.

use std::fmt;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};

use async_trait::async_trait;
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::Deserialize;
use serde_json::{json, Value};
use url::Url;

use super::backend::{BackendConfig, BackendError, ChatRequest, ChatResponse, ModelBackend};

pub const API_KEY_ENV: &str = "MODEL_API_KEY";
const REDACTED: &str = "[REDACTED]";

pub struct RemoteBackend {
    client: reqwest::Client,
    completions_url: Url,
    api_key: Option<String>,
    wire_dir: Option<PathBuf>,
    wire_seq: AtomicU64,
}

impl fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RemoteBackend")
            .field("completions_url", &self.completions_url.as_str())
            .field("api_key", &self.api_key.as_ref().map(|_| REDACTED))
            .field("wire_dir", &self.wire_dir)
            .finish()
    }
}

impl RemoteBackend {
    pub fn new(config: &BackendConfig, api_key: Option<String>) -> Result<Self, BackendError> {
        let mut base = config.endpoint_or_default();
        if !base.path().ends_with('/') {
            base.set_path(&format!("{}/", base.path()));
        }
        let completions_url = base
            .join("chat/completions")
            .map_err(|e| BackendError::Config(e.to_string()))?;
        let client = reqwest::Client::builder()
            .timeout(config.request_timeout)
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self {
            client,
            completions_url,
            api_key: api_key.filter(|k| !k.is_empty()),
            wire_dir: None,
            wire_seq: AtomicU64::new(0),
        })
    }

    /// Reads the credential from `MODEL_API_KEY`.
    pub fn from_env(config: &BackendConfig) -> Result<Self, BackendError> {
        Self::new(config, std::env::var(API_KEY_ENV).ok())
    }

    /// Log every request and response body under `dir`, credentials redacted.
    pub fn with_wire_log(mut self, dir: impl Into<PathBuf>) -> Self {
        self.wire_dir = Some(dir.into());
        self
    }

    pub fn completions_url(&self) -> &Url {
        &self.completions_url
    }

    fn redact(&self, text: &str) -> String {
        match &self.api_key {
            Some(key) => text.replace(key.as_str(), REDACTED),
            None => text.to_owned(),
        }
    }

    fn log_wire(&self, request: &ChatRequest, kind: &str, value: &Value) {
        let Some(dir) = &self.wire_dir else { return };
        let seq = self.wire_seq.fetch_add(1, Ordering::Relaxed);
        let index = request.index.map(|i| format!("-{i}")).unwrap_or_default();
        let path = dir.join(format!("{seq:05}-{}{index}.{kind}.json", request.role));
        let text = self.redact(&serde_json::to_string_pretty(value).unwrap_or_default());
        let result = std::fs::create_dir_all(dir).and_then(|_| std::fs::write(&path, text));
        if let Err(e) = result {
            tracing::warn!("could not write wire log {}: {e}", path.display());
        }
    }
}

/// Request body in the chat-completions wire format.
pub fn request_body(request: &ChatRequest) -> Value {
    let mut content: Vec<Value> = request
        .user_parts
        .iter()
        .map(|text| json!({ "type": "text", "text": text }))
        .collect();
    for a in &request.attachments {
        let url = format!("data:{};base64,{}", a.media_type, STANDARD.encode(&a.data));
        content.push(json!({ "type": "image_url", "image_url": { "url": url } }));
    }
    let mut body = json!({
        "model": request.model_id,
        "messages": [
            { "role": "system", "content": request.system_text },
            { "role": "user", "content": content },
        ],
        "reasoning_effort": request.reasoning_effort.as_str(),
    });
    if let Some(t) = request.temperature {
        body["temperature"] = json!(t);
    }
    body
}

#[derive(Deserialize)]
struct CompletionResponse {
    model: Option<String>,
    choices: Vec<CompletionChoice>,
    usage: Option<CompletionUsage>,
}

#[derive(Deserialize)]
struct CompletionChoice {
    message: CompletionMessage,
}

#[derive(Deserialize)]
struct CompletionMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct CompletionUsage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

#[async_trait]
impl ModelBackend for RemoteBackend {
    async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let api_key = self
            .api_key
            .as_deref()
            .ok_or_else(|| BackendError::Config(format!("{API_KEY_ENV} is not set")))?;
        let body = request_body(request);
        self.log_wire(
            request,
            "request",
            &json!({
                "url": self.completions_url.as_str(),
                "headers": { "authorization": format!("Bearer {REDACTED}") },
                "body": body,
            }),
        );

        let response = self
            .client
            .post(self.completions_url.clone())
            .bearer_auth(api_key)
            .json(&body)
            .send()
            .await
            .map_err(|e| {
                if e.is_timeout() {
                    BackendError::Transport(format!("timeout: {e}"))
                } else {
                    BackendError::Transport(e.to_string())
                }
            })?;
        let status = response.status();
        let text = response
            .text()
            .await
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let logged = serde_json::from_str::<Value>(&text).unwrap_or(Value::String(text.clone()));
        self.log_wire(
            request,
            "response",
            &json!({ "status": status.as_u16(), "body": logged }),
        );

        if !status.is_success() {
            return Err(BackendError::Http {
                status: status.as_u16(),
                body: self.redact(&text),
            });
        }
        let parsed: CompletionResponse =
            serde_json::from_str(&text).map_err(|e| BackendError::Malformed(e.to_string()))?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default();
        if content.trim().is_empty() {
            return Err(BackendError::EmptyResponse);
        }
        Ok(ChatResponse {
            text: content,
            model: parsed.model,
            prompt_tokens: parsed.usage.as_ref().and_then(|u| u.prompt_tokens),
            completion_tokens: parsed.usage.as_ref().and_then(|u| u.completion_tokens),
        })
    }

    fn name(&self) -> &str {
        "remote"
    }
}
