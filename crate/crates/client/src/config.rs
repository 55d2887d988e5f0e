//! Endpoint and sampling configuration.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{ClientError, Result};

/// Retry schedule for transient failures: exponential backoff with full
/// jitter, capped.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct BackoffConfig {
    pub base: Duration,
    pub factor: f64,
    pub cap: Duration,
    /// Total attempts including the first.
    pub max_attempts: u32,
    pub jitter: bool,
}

impl Default for BackoffConfig {
    fn default() -> Self {
        Self {
            base: Duration::from_secs(1),
            factor: 2.0,
            cap: Duration::from_secs(60),
            max_attempts: 6,
            jitter: true,
        }
    }
}

impl BackoffConfig {
    /// Delay before retrying after `attempt` failures (0-based), before
    /// jitter.
    pub fn raw_delay(&self, attempt: u32) -> Duration {
        let secs = self.base.as_secs_f64() * self.factor.powi(attempt as i32);
        Duration::from_secs_f64(secs.min(self.cap.as_secs_f64()))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub base_url: String,
    /// Name of the environment variable holding the bearer token; empty
    /// means no authorization header.
    pub api_key_env: String,
    pub model_name: String,
    pub request_timeout: Duration,
    pub max_in_flight: usize,
    pub requests_per_minute: u32,
    /// Sliding window the request budget applies to. The default is one
    /// minute; tests shrink it to exercise the limiter quickly.
    pub rate_window: Duration,
    pub backoff: BackoffConfig,
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key_env: String::new(),
            model_name: model_name.into(),
            request_timeout: Duration::from_secs(60),
            max_in_flight: 4,
            requests_per_minute: 60,
            rate_window: Duration::from_secs(60),
            backoff: BackoffConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_in_flight < 1 {
            return Err(ClientError::Config("max_in_flight must be at least 1".into()));
        }
        if self.requests_per_minute < 1 {
            return Err(ClientError::Config(
                "requests_per_minute must be at least 1".into(),
            ));
        }
        if self.base_url.is_empty() {
            return Err(ClientError::Config("base_url must be set".into()));
        }
        Ok(())
    }

    pub fn completions_url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    /// The task's completion length budget in tokens.
    pub max_tokens: usize,
    /// Characters kept per decoded completion; longer responses are
    /// truncated and the truncation is recorded in pool metadata.
    pub char_cap: Option<usize>,
}

impl SamplingParams {
    pub fn new(max_tokens: usize) -> Self {
        Self {
            temperature: 1.0,
            max_tokens,
            char_cap: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.temperature <= 0.0 {
            return Err(ClientError::Config("temperature must be positive".into()));
        }
        if self.max_tokens == 0 {
            return Err(ClientError::Config("max_tokens must be positive".into()));
        }
        Ok(())
    }

    /// Defaults to 20 characters per token when unset.
    pub fn effective_char_cap(&self) -> usize {
        self.char_cap.unwrap_or(self.max_tokens * 20)
    }
}
