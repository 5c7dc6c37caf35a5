//! Blocking JSON-over-HTTP POST shared by the remote teacher and scorer.

use std::time::Duration;

use crate::teacher::CallError;

pub(crate) fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into()
}

/// Joins a base URL and a path without doubling or dropping the slash.
pub(crate) fn join_url(base: &str, path: &str) -> String {
    match (base.ends_with('/'), path.starts_with('/')) {
        (true, true) => format!("{}{}", base, &path[1..]),
        (false, false) if !path.is_empty() => format!("{base}/{path}"),
        _ => format!("{base}{path}"),
    }
}

/// POSTs `body` and parses the JSON reply. 5xx and 429 responses and
/// connection failures are retryable transport errors; other non-2xx
/// statuses are final transport errors; an unparseable body is a protocol
/// error.
pub(crate) fn post_json(
    agent: &ureq::Agent,
    url: &str,
    bearer: Option<&str>,
    body: &serde_json::Value,
) -> Result<serde_json::Value, CallError> {
    let mut req = agent.post(url).header("Content-Type", "application/json");
    if let Some(token) = bearer {
        req = req.header("Authorization", &format!("Bearer {token}"));
    }
    let payload = serde_json::to_vec(body).map_err(|e| CallError::Protocol(e.to_string()))?;
    let mut resp = req
        .send(&payload[..])
        .map_err(|e| CallError::retryable(e.to_string()))?;
    let status = resp.status().as_u16();
    let text = resp
        .body_mut()
        .read_to_string()
        .map_err(|e| CallError::retryable(format!("reading body: {e}")))?;
    if !(200..300).contains(&status) {
        let retryable = status >= 500 || status == 429;
        return Err(CallError::Transport {
            message: format!("HTTP {status}"),
            retryable,
        });
    }
    serde_json::from_str(&text).map_err(|e| CallError::Protocol(format!("invalid JSON body: {e}")))
}
