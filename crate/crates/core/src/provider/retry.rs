//! Retry policy and request-rate limiting.

use std::collections::BTreeSet;
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{ModelRequest, ModelResponse, Provider, ProviderError};

const MAX_BACKOFF_MS: u64 = 60_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetryClass {
    RateLimit,
    TransientNetwork,
    UnparseableOutput,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
    pub retry_on: BTreeSet<RetryClass>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            backoff_base_ms: 500,
            retry_on: BTreeSet::from([
                RetryClass::RateLimit,
                RetryClass::TransientNetwork,
                RetryClass::UnparseableOutput,
            ]),
        }
    }
}

impl RetryPolicy {
    pub fn no_retries() -> Self {
        RetryPolicy { max_attempts: 1, backoff_base_ms: 1, retry_on: BTreeSet::new() }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.max_attempts == 0 {
            return Err("retry.max_attempts must be at least 1".into());
        }
        if self.backoff_base_ms == 0 {
            return Err("retry.backoff_base_ms must be positive".into());
        }
        Ok(())
    }

    pub fn retries(&self, class: RetryClass) -> bool {
        self.retry_on.contains(&class)
    }

    /// Delay before attempt `attempt + 1`, doubling from the base and never
    /// shorter than a server-supplied retry-after.
    pub fn backoff(&self, attempt: u32, retry_after_ms: Option<u64>) -> Duration {
        let exp = self
            .backoff_base_ms
            .saturating_mul(1u64 << attempt.saturating_sub(1).min(20))
            .min(MAX_BACKOFF_MS);
        Duration::from_millis(exp.max(retry_after_ms.unwrap_or(0)))
    }
}

/// Wraps a provider with the transport-level part of a [`RetryPolicy`]
/// (rate limits and transient network failures). The request is passed
/// through unchanged on every attempt.
pub struct Retrying<P> {
    inner: P,
    policy: RetryPolicy,
}

impl<P: Provider> Retrying<P> {
    pub fn new(inner: P, policy: RetryPolicy) -> Self {
        Retrying { inner, policy }
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }
}

impl<P: Provider> Provider for Retrying<P> {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, ProviderError> {
        let mut attempt = 1;
        loop {
            match self.inner.complete(request) {
                Ok(resp) => return Ok(resp),
                Err(err) => {
                    let retryable = err.retry_class().is_some_and(|c| self.policy.retries(c));
                    if !retryable || attempt >= self.policy.max_attempts {
                        return Err(err);
                    }
                    let retry_after = match &err {
                        ProviderError::RateLimited { retry_after_ms } => *retry_after_ms,
                        _ => None,
                    };
                    let delay = self.policy.backoff(attempt, retry_after);
                    log::debug!("attempt {attempt} failed ({err}); retrying in {delay:?}");
                    thread::sleep(delay);
                    attempt += 1;
                }
            }
        }
    }
}

/// Token bucket over requests per minute, shared between threads.
#[derive(Debug)]
pub struct RateLimiter {
    per_second: f64,
    capacity: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    /// Bucket holding up to `requests_per_minute` tokens, starting full.
    pub fn per_minute(requests_per_minute: u32) -> Self {
        let capacity = f64::from(requests_per_minute.max(1));
        RateLimiter {
            per_second: capacity / 60.0,
            capacity,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    fn refill(&self, state: &mut (f64, Instant)) {
        let now = Instant::now();
        let elapsed = now.duration_since(state.1).as_secs_f64();
        state.0 = (state.0 + elapsed * self.per_second).min(self.capacity);
        state.1 = now;
    }

    /// Takes a token if one is available; otherwise returns how long until
    /// one will be.
    pub fn try_acquire(&self) -> Result<(), Duration> {
        let mut state = self.state.lock().unwrap_or_else(|e| e.into_inner());
        self.refill(&mut state);
        if state.0 >= 1.0 {
            state.0 -= 1.0;
            Ok(())
        } else {
            Err(Duration::from_secs_f64((1.0 - state.0) / self.per_second))
        }
    }

    /// Blocks until a token is available.
    pub fn acquire(&self) {
        while let Err(wait) = self.try_acquire() {
            thread::sleep(wait);
        }
    }
}
