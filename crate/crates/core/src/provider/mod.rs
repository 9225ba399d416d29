//! Provider-agnostic chat completions over text and images.
//!
//! [`Provider`] is a blocking trait so pipelines can be driven from plain
//! worker threads. [`http::HttpProvider`] talks to a chat-completions
//! endpoint; [`mock::MockProvider`] answers from scripted fixtures.

pub mod cost;
pub mod http;
pub mod mock;
pub mod retry;

use std::ops::{Add, AddAssign};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ingestion::EncodedImage;

pub use cost::{cost_of, CostModel};
pub use http::{HttpConfig, HttpProvider, WireFormat};
pub use mock::{CallRecord, MockProvider, Responder};
pub use retry::{RateLimiter, RetryClass, RetryPolicy, Retrying};

/// Rough per-image token figure used only when an endpoint omits usage.
pub const ESTIMATED_TOKENS_PER_IMAGE: u64 = 500;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl TokenUsage {
    pub fn new(input_tokens: u64, output_tokens: u64) -> Self {
        TokenUsage { input_tokens, output_tokens }
    }

    pub fn total(&self) -> u64 {
        self.input_tokens + self.output_tokens
    }
}

impl Add for TokenUsage {
    type Output = TokenUsage;

    fn add(self, rhs: TokenUsage) -> TokenUsage {
        TokenUsage {
            input_tokens: self.input_tokens + rhs.input_tokens,
            output_tokens: self.output_tokens + rhs.output_tokens,
        }
    }
}

impl AddAssign for TokenUsage {
    fn add_assign(&mut self, rhs: TokenUsage) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for TokenUsage {
    fn sum<I: Iterator<Item = TokenUsage>>(iter: I) -> Self {
        iter.fold(TokenUsage::default(), Add::add)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelRequest {
    pub model_id: String,
    pub prompt: String,
    pub images: Vec<EncodedImage>,
    pub max_tokens: u32,
    pub temperature: f64,
}

impl ModelRequest {
    pub const MAX_IMAGES: usize = 3;

    pub fn validate(&self) -> Result<(), ProviderError> {
        let invalid = |msg: String| Err(ProviderError::InvalidRequest(msg));
        if !(0.0..=2.0).contains(&self.temperature) {
            return invalid(format!("temperature {} outside [0, 2]", self.temperature));
        }
        if self.max_tokens == 0 {
            return invalid("max_tokens must be at least 1".into());
        }
        if self.images.len() > Self::MAX_IMAGES {
            return invalid(format!("{} images attached, at most {}", self.images.len(), Self::MAX_IMAGES));
        }
        Ok(())
    }

    /// Content fingerprint over the prompt and the attached images.
    /// Decoding knobs are excluded, so a retry at a different temperature
    /// has the same fingerprint.
    pub fn fingerprint(&self) -> String {
        fingerprint(&self.prompt, &self.images)
    }
}

/// Hex SHA-256 over the prompt followed by each image's media type and
/// payload, NUL-separated.
pub fn fingerprint(prompt: &str, images: &[EncodedImage]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(prompt.as_bytes());
    for img in images {
        hasher.update([0u8]);
        hasher.update(img.media_type.as_bytes());
        hasher.update([0u8]);
        hasher.update(img.payload_b64.as_bytes());
    }
    hex(&hasher.finalize())
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
    pub usage: TokenUsage,
    pub latency_ms: u64,
    pub raw_finish_reason: String,
    /// True when the endpoint did not report usage and it was estimated.
    #[serde(default)]
    pub usage_estimated: bool,
}

/// Crude usage estimate: four characters per token plus a flat charge per
/// image.
pub fn estimate_usage(request: &ModelRequest, reply: &str) -> TokenUsage {
    let text_tokens = |s: &str| (s.chars().count() as u64).div_ceil(4);
    TokenUsage {
        input_tokens: text_tokens(&request.prompt) + ESTIMATED_TOKENS_PER_IMAGE * request.images.len() as u64,
        output_tokens: text_tokens(reply),
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProviderError {
    #[error("transport error: {0}")]
    TransportError(String),
    #[error("rate limited{}", retry_after_ms.map(|ms| format!(" (retry after {ms} ms)")).unwrap_or_default())]
    RateLimited { retry_after_ms: Option<u64> },
    #[error("endpoint returned {status}: {body}")]
    EndpointError { status: u16, body: String },
    #[error("request timed out")]
    Timeout,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl ProviderError {
    /// Retry class this error falls under, if any.
    pub fn retry_class(&self) -> Option<RetryClass> {
        match self {
            ProviderError::RateLimited { .. } => Some(RetryClass::RateLimit),
            ProviderError::TransportError(_) | ProviderError::Timeout => Some(RetryClass::TransientNetwork),
            ProviderError::EndpointError { status, .. } if *status >= 500 => Some(RetryClass::TransientNetwork),
            _ => None,
        }
    }
}

/// A chat-completions backend. Implementations must be shareable across
/// worker threads.
pub trait Provider: Send + Sync {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, ProviderError>;
}

impl<P: Provider + ?Sized> Provider for &P {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, ProviderError> {
        (**self).complete(request)
    }
}

impl<P: Provider + ?Sized> Provider for Box<P> {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, ProviderError> {
        (**self).complete(request)
    }
}

impl<P: Provider + ?Sized> Provider for Arc<P> {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, ProviderError> {
        (**self).complete(request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn req(temp: f64, max_tokens: u32, n_images: usize) -> ModelRequest {
        ModelRequest {
            model_id: "m".into(),
            prompt: "p".into(),
            images: (0..n_images).map(|i| EncodedImage::from_bytes("image/png", &[i as u8])).collect(),
            max_tokens,
            temperature: temp,
        }
    }

    #[test]
    fn request_validation() {
        assert!(req(0.5, 10, 3).validate().is_ok());
        assert!(req(0.0, 1, 0).validate().is_ok());
        assert!(req(2.1, 10, 0).validate().is_err());
        assert!(req(-0.1, 10, 0).validate().is_err());
        assert!(req(0.5, 0, 0).validate().is_err());
        assert!(req(0.5, 10, 4).validate().is_err());
    }

    #[test]
    fn fingerprint_ignores_decoding_knobs() {
        let a = req(0.5, 10, 2);
        let mut b = a.clone();
        b.temperature = 0.0;
        b.max_tokens = 99;
        assert_eq!(a.fingerprint(), b.fingerprint());
        let mut c = a.clone();
        c.images.pop();
        assert_ne!(a.fingerprint(), c.fingerprint());
        assert_eq!(a.fingerprint().len(), 64);
    }

    #[test]
    fn estimate_counts_images() {
        let u = estimate_usage(&req(0.5, 10, 2), "Affected");
        assert_eq!(u, TokenUsage::new(1 + 2 * ESTIMATED_TOKENS_PER_IMAGE, 2));
    }

    proptest! {
        #[test]
        fn usage_adds_fieldwise(a in 0u64..1_000_000, b in 0u64..1_000_000, c in 0u64..1_000_000, d in 0u64..1_000_000) {
            let s = TokenUsage::new(a, b) + TokenUsage::new(c, d);
            prop_assert_eq!(s, TokenUsage::new(a + c, b + d));
            let summed: TokenUsage = [TokenUsage::new(a, b), TokenUsage::new(c, d)].into_iter().sum();
            prop_assert_eq!(summed, s);
        }
    }
}
