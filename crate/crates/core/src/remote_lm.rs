//! Completion-endpoint client implementing the scorer contract.
//!
//! Targets the widely deployed completion API shape: perplexity comes from
//! echoed-prompt token log-probabilities
//! (`choices[0].logprobs.token_logprobs`), generation from
//! `choices[0].text`. The auth token is read only from the
//! `THREADLOOM_API_TOKEN` environment variable.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::lm_core::{LanguageModelScorer, PerplexityScore};
use crate::{Error, Result};

pub const TOKEN_ENV_VAR: &str = "THREADLOOM_API_TOKEN";

const BACKOFF_BASE_MS: u64 = 100;
const BACKOFF_CAP_MS: u64 = 2_000;

#[derive(Debug, Clone)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model_name: String,
    pub auth_token: Option<String>,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub temperature: f64,
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        EndpointConfig {
            base_url: base_url.into(),
            model_name: model_name.into(),
            auth_token: std::env::var(TOKEN_ENV_VAR).ok(),
            timeout_ms: 30_000,
            max_retries: 2,
            temperature: 0.7,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.timeout_ms == 0 {
            return Err(Error::InvalidArgument("timeout must be > 0".into()));
        }
        Ok(())
    }
}

/// Injected so tests can observe and skip the retry backoff.
pub trait Sleeper: Send + Sync {
    fn sleep(&self, d: Duration);
}

struct ThreadSleeper;
impl Sleeper for ThreadSleeper {
    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Deterministic exponential backoff, capped.
pub fn backoff_delay(attempt: u32) -> Duration {
    let ms = BACKOFF_BASE_MS.saturating_mul(1u64 << attempt.min(16));
    Duration::from_millis(ms.min(BACKOFF_CAP_MS))
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: usize,
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    logprobs: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    echo: Option<bool>,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    #[serde(default)]
    text: String,
    #[serde(default)]
    logprobs: Option<Logprobs>,
}

#[derive(Deserialize)]
struct Logprobs {
    #[serde(default)]
    token_logprobs: Vec<Option<f64>>,
}

pub struct RemoteScorer {
    cfg: EndpointConfig,
    client: reqwest::blocking::Client,
    sleeper: Box<dyn Sleeper>,
}

impl RemoteScorer {
    pub fn new(cfg: EndpointConfig) -> Result<Self> {
        Self::with_sleeper(cfg, Box::new(ThreadSleeper))
    }

    pub fn with_sleeper(cfg: EndpointConfig, sleeper: Box<dyn Sleeper>) -> Result<Self> {
        cfg.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(cfg.timeout_ms))
            .build()
            .map_err(|e| Error::Network {
                attempts: 0,
                reason: e.to_string(),
            })?;
        Ok(RemoteScorer {
            cfg,
            client,
            sleeper,
        })
    }

    fn post(&self, body: &CompletionRequest) -> Result<CompletionResponse> {
        let url = format!("{}/completions", self.cfg.base_url.trim_end_matches('/'));
        let mut attempt = 0u32;
        loop {
            let mut req = self.client.post(&url).json(body);
            if let Some(token) = &self.cfg.auth_token {
                req = req.bearer_auth(token);
            }
            match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        return resp.json().map_err(|e| Error::Network {
                            attempts: attempt + 1,
                            reason: format!("malformed response body: {e}"),
                        });
                    }
                    let retryable = status.is_server_error();
                    if !retryable || attempt >= self.cfg.max_retries {
                        return Err(Error::HttpStatus {
                            status: status.as_u16(),
                            body: resp.text().unwrap_or_default(),
                        });
                    }
                }
                Err(e) => {
                    if attempt >= self.cfg.max_retries {
                        return Err(Error::Network {
                            attempts: attempt + 1,
                            reason: e.to_string(),
                        });
                    }
                }
            }
            self.sleeper.sleep(backoff_delay(attempt));
            attempt += 1;
        }
    }

    /// Full-sequence perplexity from echoed token log-probs:
    /// `exp(-mean logprob)`, skipping a leading null entry (endpoints
    /// commonly return no log-prob for the first token).
    pub fn remote_perplexity(&self, text: &str) -> Result<PerplexityScore<f64>> {
        let body = CompletionRequest {
            model: &self.cfg.model_name,
            prompt: text,
            max_tokens: 0,
            temperature: 0.0,
            logprobs: Some(1),
            echo: Some(true),
        };
        let resp = self.post(&body)?;
        let choice = resp.choices.into_iter().next().ok_or(Error::NoLogprobs)?;
        let logprobs = choice.logprobs.ok_or(Error::NoLogprobs)?;
        let values: Vec<f64> = logprobs
            .token_logprobs
            .iter()
            .skip_while(|v| v.is_none())
            .map(|v| v.ok_or(Error::NoLogprobs))
            .collect::<Result<_>>()?;
        if values.is_empty() {
            return Err(Error::NoLogprobs);
        }
        let sum: f64 = values.iter().sum();
        let mean = sum / values.len() as f64;
        Ok(PerplexityScore {
            value: (-mean).exp(),
            log_prob: sum,
        })
    }

    pub fn remote_generate(&self, prompt: &str, max_tokens: usize) -> Result<String> {
        if max_tokens == 0 {
            return Err(Error::InvalidArgument("max_tokens must be >= 1".into()));
        }
        let body = CompletionRequest {
            model: &self.cfg.model_name,
            prompt,
            max_tokens,
            temperature: self.cfg.temperature,
            logprobs: None,
            echo: None,
        };
        let resp = self.post(&body)?;
        resp.choices
            .into_iter()
            .next()
            .map(|c| c.text)
            .ok_or_else(|| Error::Network {
                attempts: 1,
                reason: "response carried no choices".into(),
            })
    }
}

impl LanguageModelScorer for RemoteScorer {
    fn perplexity(&self, text: &str) -> Result<PerplexityScore<f64>> {
        self.remote_perplexity(text)
    }

    fn generate(&self, prompt: &str, max_tokens: usize) -> Result<String> {
        self.remote_generate(prompt, max_tokens)
    }
}
