//! HTTP adapters for the three provider wire formats.
//!
//! All providers are driven through one user-role message; the adapters
//! translate to each provider's public chat-completion schema and normalize
//! the response text plus a truncation signal.

use reqwest::blocking::Client;
use serde_json::{json, Value};

use super::{AttemptError, CompletionRequest, Provider, ProviderResponse};

pub(super) fn call(
    client: &Client,
    provider: Provider,
    base_url: &str,
    api_key: &str,
    req: &CompletionRequest,
) -> Result<ProviderResponse, AttemptError> {
    let base = base_url.trim_end_matches('/');
    let (request, expected) = match provider {
        Provider::OpenaiCompatible => (
            client
                .post(format!("{base}/chat/completions"))
                .bearer_auth(api_key)
                .json(&json!({
                    "model": req.model.model_id,
                    "messages": [{"role": "user", "content": req.prompt.text}],
                    "temperature": req.temperature(),
                    "max_tokens": req.model.max_output_tokens,
                })),
            Shape::Openai,
        ),
        Provider::AnthropicCompatible => (
            client
                .post(format!("{base}/v1/messages"))
                .header("x-api-key", api_key)
                .header("anthropic-version", "2023-06-01")
                .json(&json!({
                    "model": req.model.model_id,
                    "max_tokens": req.model.max_output_tokens,
                    "temperature": req.temperature(),
                    "messages": [{"role": "user", "content": req.prompt.text}],
                })),
            Shape::Anthropic,
        ),
        Provider::GoogleCompatible => (
            client
                .post(format!(
                    "{base}/v1beta/models/{}:generateContent?key={api_key}",
                    req.model.model_id
                ))
                .json(&json!({
                    "contents": [{"role": "user", "parts": [{"text": req.prompt.text}]}],
                    "generationConfig": {
                        "temperature": req.temperature(),
                        "maxOutputTokens": req.model.max_output_tokens,
                    },
                })),
            Shape::Google,
        ),
        Provider::Mock => unreachable!("mock handled before the http layer"),
    };

    let response = request.send().map_err(|e| {
        // Connection failures and timeouts are retryable.
        AttemptError::Transient(format!("request error: {e}"))
    })?;
    let status = response.status();
    let body = response.text().map_err(|e| AttemptError::Transient(format!("body read: {e}")))?;
    if status.as_u16() == 401 || status.as_u16() == 403 {
        return Err(AttemptError::Auth(format!("{status}: {}", snippet(&body))));
    }
    if status.as_u16() == 429 || status.is_server_error() {
        return Err(AttemptError::Transient(format!("{status}: {}", snippet(&body))));
    }
    if !status.is_success() {
        return Err(AttemptError::Fatal(format!("{status}: {}", snippet(&body))));
    }
    let value: Value = serde_json::from_str(&body)
        .map_err(|e| AttemptError::Fatal(format!("malformed response json: {e}")))?;
    extract(expected, &value)
        .ok_or_else(|| AttemptError::Fatal(format!("unexpected response shape: {}", snippet(&body))))
}

enum Shape {
    Openai,
    Anthropic,
    Google,
}

fn extract(shape: Shape, value: &Value) -> Option<ProviderResponse> {
    match shape {
        Shape::Openai => {
            let choice = value.get("choices")?.as_array()?.first()?;
            let text = choice.get("message")?.get("content")?.as_str()?.to_string();
            let truncated = choice.get("finish_reason").and_then(Value::as_str) == Some("length");
            Some(ProviderResponse { text, truncated })
        }
        Shape::Anthropic => {
            let blocks = value.get("content")?.as_array()?;
            let text: String = blocks
                .iter()
                .filter_map(|b| {
                    (b.get("type").and_then(Value::as_str) == Some("text"))
                        .then(|| b.get("text").and_then(Value::as_str))
                        .flatten()
                })
                .collect();
            let truncated =
                value.get("stop_reason").and_then(Value::as_str) == Some("max_tokens");
            Some(ProviderResponse { text, truncated })
        }
        Shape::Google => {
            let candidate = value.get("candidates")?.as_array()?.first()?;
            let parts = candidate.get("content")?.get("parts")?.as_array()?;
            let text: String =
                parts.iter().filter_map(|p| p.get("text").and_then(Value::as_str)).collect();
            let truncated =
                candidate.get("finishReason").and_then(Value::as_str) == Some("MAX_TOKENS");
            Some(ProviderResponse { text, truncated })
        }
    }
}

fn snippet(body: &str) -> String {
    let trimmed = body.trim();
    if trimmed.len() > 200 {
        format!("{}...", &trimmed[..200])
    } else {
        trimmed.to_string()
    }
}
