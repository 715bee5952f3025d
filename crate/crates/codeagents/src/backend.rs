//! Backends as the suite runner sees them, and the chat-completion client.

use std::fmt;
use std::time::Duration;

use codeagents_core::gateway::{
    count_tokens, Completion, ConstantBackend, ModelBackend, ModelError, ReplayBackend, ScriptedBackend, TokenUsage,
    UsageSource,
};
use serde_json::{json, Value};

use crate::store::RawBodies;

/// Name of the environment variable holding the API credential.
pub const API_KEY_ENV: &str = "CODEAGENTS_API_KEY";

/// A model backend that may also hand over the raw bodies of its last call.
pub trait Backend: ModelBackend + Send {
    fn take_bodies(&mut self) -> Option<RawBodies> {
        None
    }
}

impl Backend for ScriptedBackend {}
impl Backend for ReplayBackend {}
impl Backend for ConstantBackend {}

/// OpenAI-style `chat/completions` client. One request per completion.
pub struct HttpBackend {
    endpoint: String,
    model: String,
    api_key: String,
    agent: ureq::Agent,
    last: Option<RawBodies>,
}

impl fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpBackend")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("api_key", &"<redacted>")
            .finish()
    }
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        HttpBackend {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: api_key.into(),
            agent,
            last: None,
        }
    }

    /// Reads the credential from [`API_KEY_ENV`].
    pub fn from_env(endpoint: impl Into<String>, model: impl Into<String>) -> Result<Self, ModelError> {
        let key = std::env::var(API_KEY_ENV)
            .map_err(|_| ModelError::Transport(format!("environment variable {API_KEY_ENV} is not set")))?;
        Ok(Self::new(endpoint, model, key))
    }

    pub fn request_body(&self, prompt: &str) -> String {
        json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        })
        .to_string()
    }
}

/// Completion text and provider usage from a response body. Usage falls
/// back to the local tokenizer when the provider omits it.
pub fn parse_chat_response(prompt: &str, body: &str) -> Result<Completion, ModelError> {
    let v: Value = serde_json::from_str(body).map_err(|e| ModelError::ProviderRejection(format!("bad JSON: {e}")))?;
    if let Some(err) = v.get("error") {
        return Err(ModelError::ProviderRejection(err.to_string()));
    }
    let text = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| ModelError::ProviderRejection("response has no choices[0].message.content".into()))?
        .to_string();
    let reported = v.get("usage").and_then(|u| {
        Some(TokenUsage::new(
            u.get("prompt_tokens")?.as_u64()?,
            u.get("completion_tokens")?.as_u64()?,
        ))
    });
    Ok(match reported {
        Some(usage) => Completion {
            text,
            usage,
            usage_source: UsageSource::Provider,
        },
        None => Completion {
            usage: TokenUsage::new(count_tokens(prompt) as u64, count_tokens(&text) as u64),
            text,
            usage_source: UsageSource::Local,
        },
    })
}

impl ModelBackend for HttpBackend {
    fn complete(&mut self, prompt: &str) -> Result<Completion, ModelError> {
        if prompt.is_empty() {
            return Err(ModelError::EmptyPrompt);
        }
        let request = self.request_body(prompt);
        log::debug!("POST {} ({} bytes)", self.endpoint, request.len());
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .header("Content-Type", "application/json")
            .send(request.as_str())
            .map_err(|e| ModelError::Transport(e.to_string()))?;
        let status = resp.status();
        let response = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ModelError::Transport(e.to_string()))?;
        self.last = Some(RawBodies {
            request,
            response: response.clone(),
        });
        if !status.is_success() {
            let excerpt: String = response.chars().take(200).collect();
            return Err(ModelError::ProviderRejection(format!(
                "HTTP {}: {excerpt}",
                status.as_u16()
            )));
        }
        parse_chat_response(prompt, &response)
    }
}

impl Backend for HttpBackend {
    fn take_bodies(&mut self) -> Option<RawBodies> {
        self.last.take()
    }
}
