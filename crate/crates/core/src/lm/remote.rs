use serde::Deserialize;
use serde_json::json;
use std::time::Duration;

use super::{ScoreError, Scorer, TokenLogprob};
use crate::net;
use crate::teacher::CallError;

pub const DEFAULT_LOGPROBS_PATH: &str = "/v1/logprobs";

/// Scores text through an HTTP endpoint that accepts
/// `{"prompt", "continuation"}` and answers
/// `{"tokens": [{"token", "logprob"}, ...]}` for the continuation tokens.
pub struct RemoteScorer {
    agent: ureq::Agent,
    url: String,
    name: String,
}

#[derive(Deserialize)]
struct Reply {
    tokens: Vec<TokenLogprob>,
}

impl RemoteScorer {
    pub fn new(endpoint: &str, path: &str, timeout: Duration) -> Self {
        RemoteScorer {
            agent: net::agent(timeout),
            url: net::join_url(endpoint, path),
            name: endpoint.to_string(),
        }
    }
}

impl Scorer for RemoteScorer {
    fn id(&self) -> String {
        format!("remote:{}", self.name)
    }

    fn continuation_logprobs(
        &self,
        prompt: &str,
        continuation: &str,
    ) -> Result<Vec<TokenLogprob>, ScoreError> {
        let body = json!({"prompt": prompt, "continuation": continuation});
        let value = net::post_json(&self.agent, &self.url, None, &body).map_err(|e| match e {
            CallError::Transport { message, .. } => ScoreError::Transport(message),
            CallError::Protocol(m) => ScoreError::Protocol(m),
        })?;
        let reply: Reply =
            serde_json::from_value(value).map_err(|e| ScoreError::Protocol(e.to_string()))?;
        if let Some(bad) = reply
            .tokens
            .iter()
            .find(|t| !t.logprob.is_finite() || t.logprob > 0.0)
        {
            return Err(ScoreError::Protocol(format!(
                "invalid logprob {} for token `{}`",
                bad.logprob, bad.token
            )));
        }
        Ok(reply.tokens)
    }
}
