//! Live HTTP backend speaking the de-facto chat-completions wire format:
//! a single user message per request against `{base_url}/chat/completions`
//! with bearer-token auth. Any compatible gateway works; the base URL is
//! fully configurable.

use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::json;

use crate::corpus::config::ProviderSettings;

use super::{
    backoff_schedule, ChatProvider, CompletionRequest, CompletionResponse, ProviderError,
    RateLimiter,
};

const BACKOFF_FACTOR: f64 = 2.0;
const BACKOFF_CAP: Duration = Duration::from_secs(30);
const REQUEST_TIMEOUT: Duration = Duration::from_secs(120);

pub struct LiveProvider {
    http: reqwest::blocking::Client,
    endpoint: String,
    api_key: String,
    limiter: RateLimiter,
    max_retries: u32,
    retry_initial: Duration,
}

impl LiveProvider {
    /// Builds the client and resolves the API key from the configured
    /// environment variable. A missing key fails here, before any request
    /// is issued. The key never appears in config files or transcripts.
    pub fn new(settings: &ProviderSettings) -> Result<LiveProvider, ProviderError> {
        let api_key = std::env::var(&settings.api_key_env).map_err(|_| {
            ProviderError::Credential(format!(
                "environment variable {} is not set",
                settings.api_key_env
            ))
        })?;
        if api_key.trim().is_empty() {
            return Err(ProviderError::Credential(format!(
                "environment variable {} is empty",
                settings.api_key_env
            )));
        }
        let http = reqwest::blocking::Client::builder()
            .timeout(REQUEST_TIMEOUT)
            .build()
            .map_err(|e| ProviderError::Transport {
                attempts: 0,
                last_status: None,
                message: format!("cannot build http client: {e}"),
            })?;
        Ok(LiveProvider {
            http,
            endpoint: format!("{}/chat/completions", settings.base_url.trim_end_matches('/')),
            api_key,
            limiter: RateLimiter::per_minute(settings.requests_per_minute),
            max_retries: settings.max_retries,
            retry_initial: Duration::from_millis(settings.retry_initial_ms),
        })
    }

    fn attempt(&self, request: &CompletionRequest) -> AttemptOutcome {
        self.limiter.acquire();
        let body = json!({
            "model": request.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let sent = self
            .http
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send();

        let response = match sent {
            Ok(r) => r,
            Err(e) => return AttemptOutcome::Retryable(None, format!("request failed: {e}")),
        };
        let status = response.status().as_u16();
        match status {
            200..=299 => match response.json::<ChatCompletionBody>() {
                Ok(parsed) => match parsed.first_content() {
                    Some(text) => AttemptOutcome::Ok(text),
                    None => AttemptOutcome::Fatal(ProviderError::Transport {
                        attempts: 0,
                        last_status: Some(status),
                        message: "response carried no message content".to_string(),
                    }),
                },
                Err(e) => AttemptOutcome::Retryable(
                    Some(status),
                    format!("cannot parse response body: {e}"),
                ),
            },
            401 | 403 => AttemptOutcome::Fatal(ProviderError::Credential(format!(
                "endpoint rejected credentials (status {status})"
            ))),
            429 | 500..=599 => {
                AttemptOutcome::Retryable(Some(status), format!("transient status {status}"))
            }
            _ => AttemptOutcome::Fatal(ProviderError::Transport {
                attempts: 1,
                last_status: Some(status),
                message: format!("unexpected status {status}"),
            }),
        }
    }
}

enum AttemptOutcome {
    Ok(String),
    Retryable(Option<u16>, String),
    Fatal(ProviderError),
}

impl ChatProvider for LiveProvider {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, ProviderError> {
        let max_attempts = self.max_retries.saturating_add(1);
        let delays = backoff_schedule(self.retry_initial, BACKOFF_FACTOR, BACKOFF_CAP, max_attempts);
        let started = Instant::now();

        let mut last_status = None;
        let mut last_message = String::new();
        for attempt in 0..max_attempts {
            if attempt > 0 {
                let delay = delays[(attempt - 1) as usize];
                log::debug!(
                    "retrying {} (attempt {}/{max_attempts}) after {delay:?}",
                    request.key,
                    attempt + 1
                );
                std::thread::sleep(delay);
            }
            match self.attempt(request) {
                AttemptOutcome::Ok(text) => {
                    return Ok(CompletionResponse::fresh(text, started.elapsed()));
                }
                AttemptOutcome::Retryable(status, message) => {
                    log::warn!("attempt {} for {} failed: {message}", attempt + 1, request.key);
                    last_status = status;
                    last_message = message;
                }
                AttemptOutcome::Fatal(err) => return Err(err),
            }
        }
        Err(ProviderError::Transport {
            attempts: max_attempts,
            last_status,
            message: last_message,
        })
    }
}

#[derive(Deserialize)]
struct ChatCompletionBody {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

impl ChatCompletionBody {
    fn first_content(&self) -> Option<String> {
        self.choices.first().and_then(|c| c.message.content.clone())
    }
}
