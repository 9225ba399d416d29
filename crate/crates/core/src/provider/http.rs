//! JSON-over-HTTP chat-completions client.
//!
//! Requests are `POST {base_url}/chat/completions` with a single user
//! message whose content is the prompt text followed by one part per image.
//! Replies are read from `choices[0].message.content`, with token counts from
//! `usage.prompt_tokens` / `usage.completion_tokens`.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{estimate_usage, ModelRequest, ModelResponse, Provider, ProviderError, RateLimiter, TokenUsage};

/// Shape of image parts in the request body.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WireFormat {
    /// `{"type": "image_url", "image_url": {"url": "data:<mime>;base64,..."}}`
    #[default]
    Openai,
    /// `{"type": "image", "media_type": "<mime>", "data": "<base64>"}`
    Generic,
}

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub base_url: String,
    pub api_key: String,
    pub timeout: Duration,
    pub requests_per_minute: Option<u32>,
    pub wire_format: WireFormat,
}

pub struct HttpProvider {
    config: HttpConfig,
    client: reqwest::blocking::Client,
    limiter: Option<RateLimiter>,
}

impl HttpProvider {
    pub fn new(config: HttpConfig) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| ProviderError::TransportError(e.to_string()))?;
        let limiter = config.requests_per_minute.map(RateLimiter::per_minute);
        Ok(HttpProvider { config, client, limiter })
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }
}

/// Request body for `request` in the given wire format.
pub fn request_body(request: &ModelRequest, format: WireFormat) -> Value {
    let mut content = vec![json!({"type": "text", "text": request.prompt})];
    for img in &request.images {
        content.push(match format {
            WireFormat::Openai => json!({"type": "image_url", "image_url": {"url": img.data_url()}}),
            WireFormat::Generic => {
                json!({"type": "image", "media_type": img.media_type, "data": img.payload_b64})
            }
        });
    }
    json!({
        "model": request.model_id,
        "messages": [{"role": "user", "content": content}],
        "max_tokens": request.max_tokens,
        "temperature": request.temperature,
    })
}

/// Extracts text, finish reason and usage from a response body. Returns
/// `None` for usage when the endpoint did not report it.
pub fn parse_response_body(body: &Value) -> Result<(String, String, Option<TokenUsage>), ProviderError> {
    let choice = body
        .pointer("/choices/0")
        .ok_or_else(|| ProviderError::EndpointError { status: 200, body: "response has no choices".into() })?;
    let text = match choice.pointer("/message/content") {
        Some(Value::String(s)) => s.clone(),
        // some endpoints return content as an array of parts
        Some(Value::Array(parts)) => parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join(""),
        _ => {
            return Err(ProviderError::EndpointError { status: 200, body: "response has no message content".into() })
        }
    };
    let finish = choice.get("finish_reason").and_then(Value::as_str).unwrap_or("").to_string();
    let usage = body.get("usage").and_then(|u| {
        Some(TokenUsage {
            input_tokens: u.get("prompt_tokens")?.as_u64()?,
            output_tokens: u.get("completion_tokens")?.as_u64()?,
        })
    });
    Ok((text, finish, usage))
}

impl Provider for HttpProvider {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, ProviderError> {
        request.validate()?;
        if let Some(limiter) = &self.limiter {
            limiter.acquire();
        }
        let started = Instant::now();
        let resp = self
            .client
            .post(self.endpoint())
            .bearer_auth(&self.config.api_key)
            .json(&request_body(request, self.config.wire_format))
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    ProviderError::Timeout
                } else {
                    ProviderError::TransportError(e.to_string())
                }
            })?;

        let status = resp.status();
        if status.as_u16() == 429 {
            let retry_after_ms = resp
                .headers()
                .get(reqwest::header::RETRY_AFTER)
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse::<f64>().ok())
                .map(|secs| (secs * 1000.0) as u64);
            return Err(ProviderError::RateLimited { retry_after_ms });
        }
        let text = resp.text().map_err(|e| {
            if e.is_timeout() {
                ProviderError::Timeout
            } else {
                ProviderError::TransportError(e.to_string())
            }
        })?;
        if !status.is_success() {
            return Err(ProviderError::EndpointError { status: status.as_u16(), body: text });
        }
        let body: Value = serde_json::from_str(&text)
            .map_err(|e| ProviderError::EndpointError { status: status.as_u16(), body: format!("invalid JSON: {e}") })?;
        let (reply, finish, usage) = parse_response_body(&body)?;
        let latency_ms = started.elapsed().as_millis() as u64;
        let (usage, usage_estimated) = match usage {
            Some(u) => (u, false),
            None => {
                log::warn!("endpoint omitted usage; estimating (estimated=true)");
                (estimate_usage(request, &reply), true)
            }
        };
        Ok(ModelResponse { text: reply, usage, latency_ms, raw_finish_reason: finish, usage_estimated })
    }
}
