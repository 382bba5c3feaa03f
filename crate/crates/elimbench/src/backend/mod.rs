//! Uniform completion interface over a chat-completions HTTP endpoint and a
//! deterministic in-process mock, plus per-label probability extraction.
//!
//! Backends are safe for concurrent use; the rate limiter is the only shared
//! state and is internally synchronized.

mod http;
mod mock;

pub use http::HttpChatBackend;
pub use mock::{MockAnswer, MockBackend, MockPolicy, MockSettings};

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Question;

#[derive(Debug, Error)]
pub enum BackendError {
    /// Worth retrying: timeouts, connection failures, 429/5xx replies.
    #[error("transient backend failure: {0}")]
    Transient(String),
    /// Not worth retrying: bad requests, authentication, scripted failures.
    #[error("permanent backend failure: {0}")]
    Permanent(String),
    #[error("authentication: environment variable `{0}` is not set")]
    AuthMissing(String),
    #[error("malformed endpoint reply: {0}")]
    MalformedReply(String),
    #[error("gave up after {attempts} attempts; last error: {last}")]
    RetriesExhausted {
        attempts: u32,
        #[source]
        last: Box<BackendError>,
    },
    #[error("backend `{backend}` exposes neither log-probabilities nor scoring")]
    Capability { backend: String },
    #[error("invalid backend spec: {0}")]
    InvalidSpec(String),
    #[error("invalid generation params: {0}")]
    InvalidParams(String),
    #[error("mock backend has no scripted answer for {0}")]
    UnmappedQuestion(String),
}

impl BackendError {
    pub fn is_transient(&self) -> bool {
        matches!(self, BackendError::Transient(_))
    }
}

/// Sampling parameters for one completion request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub stop_sequences: Vec<String>,
    pub seed_hint: Option<u64>,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            temperature: 0.3,
            max_tokens: 256,
            stop_sequences: Vec::new(),
            seed_hint: None,
        }
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.temperature < 0.0 || !self.temperature.is_finite() {
            return Err(BackendError::InvalidParams(format!(
                "temperature {} must be finite and >= 0",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidParams("max_tokens must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// One completion: generated text plus transport metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
    pub label_probs: Option<BTreeMap<char, f64>>,
    pub latency_ms: f64,
    pub token_usage: TokenUsage,
    pub backend_id: String,
}

/// Retry schedule for transient failures: exponential backoff capped at
/// `max_backoff_ms`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub backoff_multiplier: f64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            initial_backoff_ms: 250,
            backoff_multiplier: 2.0,
            max_backoff_ms: 4_000,
        }
    }
}

impl RetryPolicy {
    /// Backoff before retry number `attempt` (0-based over completed tries).
    pub fn backoff(&self, attempt: u32) -> Duration {
        let ms = self.initial_backoff_ms as f64 * self.backoff_multiplier.powi(attempt as i32);
        Duration::from_millis(ms.min(self.max_backoff_ms as f64) as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    HttpChat,
    Mock,
}

/// Declarative backend description, as it appears in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendSpec {
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint_url: Option<String>,
    pub model_name: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub auth_env: Option<String>,
    /// Requests per second; absent means unlimited.
    #[serde(default)]
    pub rate_limit: Option<u32>,
    #[serde(default)]
    pub retry: RetryPolicy,
    /// Mock behavior; required when `kind` is `mock`.
    #[serde(default)]
    pub mock: Option<MockSettings>,
}

impl BackendSpec {
    pub fn http_chat(endpoint_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        BackendSpec {
            kind: BackendKind::HttpChat,
            endpoint_url: Some(endpoint_url.into()),
            model_name: model_name.into(),
            auth_env: None,
            rate_limit: None,
            retry: RetryPolicy::default(),
            mock: None,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        match self.kind {
            BackendKind::HttpChat => {
                if self.endpoint_url.as_deref().is_none_or(str::is_empty) {
                    return Err(BackendError::InvalidSpec(
                        "http_chat backend requires endpoint_url".into(),
                    ));
                }
                if self.model_name.is_empty() {
                    return Err(BackendError::InvalidSpec(
                        "http_chat backend requires model_name".into(),
                    ));
                }
            }
            BackendKind::Mock => {
                if self.mock.is_none() {
                    return Err(BackendError::InvalidSpec(
                        "mock backend requires mock settings".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Builds a live backend. Mock backends answer about the given questions.
    pub fn build(&self, questions: &[Question]) -> Result<Box<dyn CompletionBackend>, BackendError> {
        self.validate()?;
        match self.kind {
            BackendKind::HttpChat => Ok(Box::new(HttpChatBackend::new(self)?)),
            BackendKind::Mock => {
                let settings = self.mock.clone().expect("validated above");
                Ok(Box::new(MockBackend::from_settings(
                    &self.model_name,
                    settings,
                    questions,
                )?))
            }
        }
    }
}

/// Shared sink recording the exact prompt bytes each request carried.
pub type RequestCapture = Arc<Mutex<Vec<String>>>;

pub fn new_capture() -> RequestCapture {
    Arc::new(Mutex::new(Vec::new()))
}

/// A completion provider. `complete` never mutates the prompt; the request
/// carries the prompt bytes unchanged.
pub trait CompletionBackend: Send + Sync {
    fn backend_id(&self) -> String;

    fn complete(&self, prompt: &str, params: &GenParams) -> Result<ModelResponse, BackendError>;

    /// Log-probabilities of candidate tokens at the first answer position,
    /// when the backend exposes them. `Ok(None)` means unsupported.
    fn label_logprobs(
        &self,
        _prompt: &str,
        _params: &GenParams,
    ) -> Result<Option<BTreeMap<char, f64>>, BackendError> {
        Ok(None)
    }

    /// Log-score of `continuation` following `prompt`, when the backend can
    /// score continuations. `Ok(None)` means unsupported.
    fn score_continuation(
        &self,
        _prompt: &str,
        _continuation: &str,
    ) -> Result<Option<f64>, BackendError> {
        Ok(None)
    }
}

/// Probability distribution over exactly the given labels, renormalized to
/// sum 1. Prefers first-answer-token log-probabilities; falls back to one
/// scored continuation per label; errors when the backend supports neither.
pub fn choice_distribution(
    backend: &dyn CompletionBackend,
    prompt: &str,
    labels: &[char],
    params: &GenParams,
) -> Result<BTreeMap<char, f64>, BackendError> {
    if labels.is_empty() {
        return Err(BackendError::InvalidParams("label set must be non-empty".into()));
    }
    let mut distinct = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() != labels.len() {
        return Err(BackendError::InvalidParams("labels must be distinct".into()));
    }

    if let Some(logprobs) = backend.label_logprobs(prompt, params)? {
        let mut masses: BTreeMap<char, f64> = BTreeMap::new();
        for (token, lp) in logprobs {
            if labels.contains(&token) {
                *masses.entry(token).or_insert(0.0) += lp.exp();
            }
        }
        let total: f64 = masses.values().sum();
        if total > 0.0 {
            for label in labels {
                masses.entry(*label).or_insert(0.0);
            }
            for v in masses.values_mut() {
                *v /= total;
            }
            return Ok(masses);
        }
        // No mass landed on any requested label; fall through to scoring.
    }

    let mut scores = BTreeMap::new();
    for &label in labels {
        match backend.score_continuation(prompt, &format!("({label})"))? {
            Some(score) => {
                scores.insert(label, score);
            }
            None => {
                return Err(BackendError::Capability {
                    backend: backend.backend_id(),
                })
            }
        }
    }
    let max = scores.values().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: BTreeMap<char, f64> =
        scores.into_iter().map(|(l, s)| (l, (s - max).exp())).collect();
    let total: f64 = probs.values().sum();
    for v in probs.values_mut() {
        *v /= total;
    }
    Ok(probs)
}

/// Time source for the rate limiter. The virtual implementation lets tests
/// drive the limiter without real sleeps.
pub trait Clock: Send + Sync {
    /// Monotonic time since the clock's origin.
    fn now(&self) -> Duration;
    fn sleep(&self, d: Duration);
}

pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        SystemClock { origin: Instant::now() }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Manually advanced clock; `sleep` moves time forward immediately.
pub struct VirtualClock {
    now: Mutex<Duration>,
}

impl VirtualClock {
    pub fn new() -> Self {
        VirtualClock { now: Mutex::new(Duration::ZERO) }
    }
}

impl Default for VirtualClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> Duration {
        *self.now.lock().unwrap()
    }

    fn sleep(&self, d: Duration) {
        *self.now.lock().unwrap() += d;
    }
}

/// Sliding-window limiter: at most `limit` acquisitions in any one-second
/// window, enforced by sleeping on the shared clock.
pub struct RateLimiter {
    limit: usize,
    clock: Arc<dyn Clock>,
    issued: Mutex<Vec<Duration>>,
}

impl RateLimiter {
    pub fn new(limit: u32, clock: Arc<dyn Clock>) -> Self {
        RateLimiter {
            limit: limit.max(1) as usize,
            clock,
            issued: Mutex::new(Vec::new()),
        }
    }

    fn prune(issued: &mut MutexGuard<'_, Vec<Duration>>, now: Duration) {
        // an entry occupies its slot until a full second has elapsed
        issued.retain(|&t| t + Duration::from_secs(1) > now);
    }

    /// Blocks until a request slot is available, then records the issue time.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut issued = self.issued.lock().unwrap();
                let now = self.clock.now();
                Self::prune(&mut issued, now);
                if issued.len() < self.limit {
                    issued.push(now);
                    return;
                }
                issued[0] + Duration::from_secs(1) - now + Duration::from_millis(1)
            };
            self.clock.sleep(wait);
        }
    }
}
