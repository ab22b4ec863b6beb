//! Physical transports: how a request reaches a provider endpoint.

use std::time::Duration;

use serde_json::json;

use super::{ChatRequest, ProviderConfig, ProviderKind};

/// Transport-level failure with routing hints for the retry loop.
#[derive(Debug)]
pub struct TransportError {
    pub message: String,
    pub retryable: bool,
    pub timeout: bool,
}

impl TransportError {
    pub fn fatal(message: impl Into<String>) -> Self {
        TransportError { message: message.into(), retryable: false, timeout: false }
    }

    pub fn retryable(message: impl Into<String>) -> Self {
        TransportError { message: message.into(), retryable: true, timeout: false }
    }

    pub fn timed_out(message: impl Into<String>) -> Self {
        TransportError { message: message.into(), retryable: true, timeout: true }
    }
}

pub trait Transport: Send + Sync {
    fn execute(
        &self,
        provider: &ProviderConfig,
        request: &ChatRequest,
    ) -> Result<String, TransportError>;
}

/// Blocking HTTP transport speaking either an OpenAI-style chat completions
/// protocol or a bare question/answer endpoint, selected per provider.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new() -> Self {
        // Per-request timeouts come from provider config; the client itself
        // imposes none.
        let client = reqwest::blocking::Client::builder()
            .timeout(None)
            .build()
            .expect("HTTP client builds");
        HttpTransport { client }
    }
}

impl Default for HttpTransport {
    fn default() -> Self {
        Self::new()
    }
}

fn truncate_for_log(body: &str) -> String {
    const LIMIT: usize = 200;
    if body.len() <= LIMIT {
        return body.to_string();
    }
    let mut end = LIMIT;
    while !body.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}…", &body[..end])
}

impl Transport for HttpTransport {
    fn execute(
        &self,
        provider: &ProviderConfig,
        request: &ChatRequest,
    ) -> Result<String, TransportError> {
        let url = provider
            .base_url
            .as_deref()
            .ok_or_else(|| TransportError::fatal("provider has no base_url configured"))?;

        let body = match provider.kind {
            ProviderKind::Chat => {
                let mut payload = json!({
                    "model": request.model,
                    "messages": [
                        {"role": "system", "content": request.system_prompt},
                        {"role": "user", "content": request.user_prompt},
                    ],
                    "temperature": request.temperature,
                });
                if let Some(max) = request.max_output_tokens {
                    payload["max_tokens"] = json!(max);
                }
                payload
            }
            ProviderKind::AnswerApi => json!({ "question": request.user_prompt }),
        };

        let mut builder = self
            .client
            .post(url)
            .timeout(Duration::from_secs(provider.timeout_secs.max(1)))
            .json(&body);

        if let Some(var) = &provider.api_key_env {
            let key = std::env::var(var).map_err(|_| {
                TransportError::fatal(format!("API key environment variable {var} is not set"))
            })?;
            builder = builder.bearer_auth(key);
        }

        let response = builder.send().map_err(|e| {
            if e.is_timeout() {
                TransportError::timed_out(format!("request to {url} timed out: {e}"))
            } else {
                // Connection-level failures (refused, reset, DNS) are
                // transient by assumption.
                TransportError::retryable(format!("request to {url} failed: {e}"))
            }
        })?;

        let status = response.status();
        let text = response
            .text()
            .map_err(|e| TransportError::retryable(format!("reading response body: {e}")))?;

        if !status.is_success() {
            let message =
                format!("{url} returned {status}: {}", truncate_for_log(&text));
            return if status.as_u16() == 429 || status.is_server_error() {
                Err(TransportError::retryable(message))
            } else {
                Err(TransportError::fatal(message))
            };
        }

        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| {
            TransportError::fatal(format!(
                "{url} returned non-JSON body ({e}): {}",
                truncate_for_log(&text)
            ))
        })?;

        match provider.kind {
            ProviderKind::Chat => value
                .pointer("/choices/0/message/content")
                .and_then(|v| v.as_str())
                .map(str::to_string)
                .ok_or_else(|| {
                    TransportError::fatal(format!(
                        "chat payload missing choices[0].message.content: {}",
                        truncate_for_log(&text)
                    ))
                }),
            ProviderKind::AnswerApi => value
                .get("answer")
                .and_then(|v| v.as_str())
                .map(str::to_string)
                .ok_or_else(|| {
                    TransportError::fatal(format!(
                        "answer payload missing string field \"answer\": {}",
                        truncate_for_log(&text)
                    ))
                }),
        }
    }
}
