//! Chat-completions teacher over HTTP.

use serde_json::json;
use std::time::Duration;

use super::{CallError, ConfigError, Request, TeacherBackend, TeacherConfig, TOKEN_ENV};
use crate::net;

/// Sends each prompt as a single user message and returns
/// `choices[0].message.content` verbatim.
pub struct RemoteBackend {
    agent: ureq::Agent,
    url: String,
    model: String,
    temperature: f64,
    max_tokens: usize,
    token: Option<String>,
}

impl RemoteBackend {
    pub fn from_config(config: &TeacherConfig) -> Result<Self, ConfigError> {
        let endpoint = config
            .endpoint
            .as_deref()
            .ok_or(ConfigError::MissingEndpoint)?;
        let model = config.model.clone().ok_or(ConfigError::MissingModel)?;
        Ok(RemoteBackend {
            agent: net::agent(Duration::from_secs(config.timeout_s.max(1))),
            url: net::join_url(endpoint, &config.path),
            model,
            temperature: config.temperature,
            max_tokens: config.max_tokens,
            token: std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty()),
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

/// Extracts `choices[0].message.content` from a chat-completions reply.
pub(crate) fn completion_text(body: &serde_json::Value) -> Result<String, CallError> {
    body.pointer("/choices/0/message/content")
        .and_then(|v| v.as_str())
        .map(str::to_string)
        .ok_or_else(|| CallError::Protocol("missing choices[0].message.content".into()))
}

impl TeacherBackend for RemoteBackend {
    fn id(&self) -> String {
        format!("remote:{}", self.model)
    }

    fn complete(&self, request: &Request<'_>) -> Result<String, CallError> {
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt().text}],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        });
        let reply = net::post_json(&self.agent, &self.url, self.token.as_deref(), &body)?;
        completion_text(&reply)
    }
}
