//! Chat-completion backends behind one synchronous interface: a live
//! HTTP client and two offline mocks (scripted and stochastic).
//!
//! Providers are shareable across threads; the live client's rate limiter
//! and retry state are internally synchronized, and responses are plain
//! immutable values.

mod live;
mod mock;

pub use live::LiveProvider;
pub use mock::{stochastic_emit, ScriptedMock, StochasticMock};

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Addresses one logical exchange within a pair's audit. Together with
/// the pair name this keys both the transcript and mock scripts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExchangeKey {
    /// Stage-1 completion attempt; `sample_index` is the attempt number,
    /// so repeated draws of the same prompt stay distinct.
    Completion { template_id: u8, sample_index: u32 },
    /// Stage-2 verdict for one collected statement.
    Rejudge { statement_index: u32 },
    /// Open-target demonstration exchange.
    OpenTarget { sample_index: u32 },
}

impl ExchangeKey {
    /// Transcript stage number: 1, 2, or 0 for demonstrations.
    pub fn stage(&self) -> u8 {
        match self {
            ExchangeKey::Completion { .. } => 1,
            ExchangeKey::Rejudge { .. } => 2,
            ExchangeKey::OpenTarget { .. } => 0,
        }
    }

    fn sample_index(&self) -> u32 {
        match self {
            ExchangeKey::Completion { sample_index, .. } => *sample_index,
            ExchangeKey::Rejudge { statement_index } => *statement_index,
            ExchangeKey::OpenTarget { sample_index } => *sample_index,
        }
    }
}

impl fmt::Display for ExchangeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExchangeKey::Completion {
                template_id,
                sample_index,
            } => write!(f, "stage1/template{template_id}/sample{sample_index}"),
            ExchangeKey::Rejudge { statement_index } => {
                write!(f, "stage2/statement{statement_index}")
            }
            ExchangeKey::OpenTarget { sample_index } => write!(f, "demo/sample{sample_index}"),
        }
    }
}

/// One single-turn chat request.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub prompt: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Attribute pair (or demo subject) this request belongs to.
    pub pair: String,
    pub key: ExchangeKey,
}

impl CompletionRequest {
    /// Stable hash of (prompt, model, sampling params, sample index);
    /// identical logical requests always produce the same id, and
    /// repeated draws of one prompt stay distinct cacheable events.
    pub fn request_id(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.model.as_bytes());
        hasher.update([0]);
        hasher.update(self.temperature.to_bits().to_le_bytes());
        hasher.update(self.max_tokens.to_le_bytes());
        hasher.update(self.key.sample_index().to_le_bytes());
        hasher.update([0]);
        hasher.update(self.prompt.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// The model's reply, untruncated.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResponse {
    /// Exactly the message content returned by the backend.
    pub text: String,
    pub latency: Duration,
    pub provider_meta: BTreeMap<String, String>,
    pub from_cache: bool,
}

impl CompletionResponse {
    pub fn fresh(text: String, latency: Duration) -> CompletionResponse {
        CompletionResponse {
            text,
            latency,
            provider_meta: BTreeMap::new(),
            from_cache: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum ProviderError {
    /// Missing or rejected credentials; never retried.
    #[error("credential error: {0}")]
    Credential(String),
    /// Transport-level failure after exhausting retries.
    #[error("transport failed after {attempts} attempt(s){}: {message}", format_status(.last_status))]
    Transport {
        attempts: u32,
        last_status: Option<u16>,
        message: String,
    },
    /// A scripted mock has no response (left) for this key.
    #[error("mock script exhausted for pair {pair:?}, key {key}")]
    ScriptExhausted { pair: String, key: ExchangeKey },
    /// Malformed script file or generator misuse.
    #[error("script error: {0}")]
    Script(String),
}

fn format_status(status: &Option<u16>) -> String {
    match status {
        Some(code) => format!(" (last status {code})"),
        None => String::new(),
    }
}

/// A synchronous single-turn chat backend. Each call is a fresh exchange;
/// no conversation state is carried between requests.
pub trait ChatProvider: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, ProviderError>;
}

/// Exponential backoff delays for attempts `1..max_attempts` (the first
/// attempt waits nothing). Nondecreasing and capped.
pub fn backoff_schedule(
    initial: Duration,
    factor: f64,
    cap: Duration,
    max_attempts: u32,
) -> Vec<Duration> {
    let mut out = Vec::new();
    let mut delay = initial;
    for _ in 1..max_attempts {
        out.push(delay.min(cap));
        let next = delay.as_secs_f64() * factor.max(1.0);
        delay = Duration::from_secs_f64(next.min(cap.as_secs_f64().max(initial.as_secs_f64())));
    }
    out
}

/// Sliding-window rate limiter: at most `ceiling` acquisitions in any
/// window of the configured length. `acquire` blocks until a slot frees.
pub struct RateLimiter {
    ceiling: usize,
    window: Duration,
    issued: Mutex<VecDeque<Instant>>,
}

impl RateLimiter {
    pub fn new(ceiling: usize, window: Duration) -> RateLimiter {
        RateLimiter {
            ceiling: ceiling.max(1),
            window,
            issued: Mutex::new(VecDeque::new()),
        }
    }

    /// Per-minute construction used by the live provider.
    pub fn per_minute(ceiling: u32) -> RateLimiter {
        RateLimiter::new(ceiling as usize, Duration::from_secs(60))
    }

    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut issued = self.issued.lock().expect("rate limiter lock");
                let now = Instant::now();
                while let Some(front) = issued.front() {
                    if now.duration_since(*front) >= self.window {
                        issued.pop_front();
                    } else {
                        break;
                    }
                }
                if issued.len() < self.ceiling {
                    issued.push_back(now);
                    return;
                }
                self.window - now.duration_since(*issued.front().expect("nonempty"))
            };
            std::thread::sleep(wait.max(Duration::from_millis(1)));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(prompt: &str, sample_index: u32) -> CompletionRequest {
        CompletionRequest {
            prompt: prompt.to_string(),
            model: "test-model".to_string(),
            temperature: 1.0,
            max_tokens: 64,
            pair: "Secretary vs. CEO".to_string(),
            key: ExchangeKey::Completion {
                template_id: 1,
                sample_index,
            },
        }
    }

    #[test]
    fn request_id_is_stable_and_index_sensitive() {
        let a = request("prompt", 0);
        assert_eq!(a.request_id(), request("prompt", 0).request_id());
        assert_ne!(a.request_id(), request("prompt", 1).request_id());
        assert_ne!(a.request_id(), request("other", 0).request_id());

        let mut warmer = request("prompt", 0);
        warmer.temperature = 0.0;
        assert_ne!(a.request_id(), warmer.request_id());
    }

    #[test]
    fn backoff_is_nondecreasing_and_capped() {
        for (initial_ms, factor, cap_ms, attempts) in [
            (100u64, 2.0, 5_000u64, 8u32),
            (500, 2.0, 1_000, 6),
            (1, 1.0, 10, 4),
            (250, 3.5, 60_000, 10),
        ] {
            let schedule = backoff_schedule(
                Duration::from_millis(initial_ms),
                factor,
                Duration::from_millis(cap_ms),
                attempts,
            );
            assert_eq!(schedule.len(), attempts.saturating_sub(1) as usize);
            for pair in schedule.windows(2) {
                assert!(pair[1] >= pair[0], "delays nondecreasing: {schedule:?}");
            }
            for delay in &schedule {
                assert!(*delay <= Duration::from_millis(cap_ms));
            }
        }
    }

    #[test]
    fn rate_limiter_enforces_the_window_ceiling() {
        let limiter = RateLimiter::new(3, Duration::from_millis(80));
        let mut stamps = Vec::new();
        for _ in 0..7 {
            limiter.acquire();
            stamps.push(Instant::now());
        }
        // Any four consecutive acquisitions must span at least one window.
        for w in stamps.windows(4) {
            let span = w[3].duration_since(w[0]);
            assert!(
                span >= Duration::from_millis(75),
                "4 acquisitions within {span:?}"
            );
        }
    }

    #[test]
    fn exchange_key_stage_numbers() {
        assert_eq!(
            ExchangeKey::Completion {
                template_id: 1,
                sample_index: 0
            }
            .stage(),
            1
        );
        assert_eq!(ExchangeKey::Rejudge { statement_index: 0 }.stage(), 2);
        assert_eq!(ExchangeKey::OpenTarget { sample_index: 0 }.stage(), 0);
    }
}
