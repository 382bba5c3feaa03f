//! Chat-completions HTTP backend. Sends the whole prompt as a single user
//! message, retries transient failures per the configured schedule, and
//! extracts first-answer-token log-probabilities when the endpoint returns
//! them.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::backend::{
    BackendError, BackendSpec, Clock, CompletionBackend, GenParams, ModelResponse, RateLimiter,
    RequestCapture, RetryPolicy, SystemClock, TokenUsage,
};

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    stop: Option<&'a [String]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    logprobs: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    top_logprobs: Option<u32>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<UsageBody>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: MessageBody,
    #[serde(default)]
    logprobs: Option<LogprobsBody>,
}

#[derive(Deserialize)]
struct MessageBody {
    content: Option<String>,
}

#[derive(Deserialize)]
struct UsageBody {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

#[derive(Deserialize)]
struct LogprobsBody {
    #[serde(default)]
    content: Vec<TokenLogprob>,
}

#[derive(Deserialize)]
struct TokenLogprob {
    token: String,
    logprob: f64,
    #[serde(default)]
    top_logprobs: Vec<TopLogprob>,
}

#[derive(Deserialize)]
struct TopLogprob {
    token: String,
    logprob: f64,
}

pub struct HttpChatBackend {
    endpoint_url: String,
    model_name: String,
    auth_env: Option<String>,
    retry: RetryPolicy,
    client: reqwest::blocking::Client,
    limiter: Option<RateLimiter>,
    clock: Arc<dyn Clock>,
    capture: Option<RequestCapture>,
}

impl HttpChatBackend {
    pub fn new(spec: &BackendSpec) -> Result<Self, BackendError> {
        spec.validate()?;
        let clock: Arc<dyn Clock> = Arc::new(SystemClock::new());
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| BackendError::Permanent(format!("http client: {e}")))?;
        Ok(HttpChatBackend {
            endpoint_url: spec.endpoint_url.clone().expect("validated"),
            model_name: spec.model_name.clone(),
            auth_env: spec.auth_env.clone(),
            retry: spec.retry.clone(),
            client,
            limiter: spec
                .rate_limit
                .map(|limit| RateLimiter::new(limit, clock.clone())),
            clock,
            capture: None,
        })
    }

    pub fn with_capture(mut self, capture: RequestCapture) -> Self {
        self.capture = Some(capture);
        self
    }

    fn bearer_token(&self) -> Result<Option<String>, BackendError> {
        match &self.auth_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| BackendError::AuthMissing(var.clone())),
        }
    }

    /// One POST, classified into transient vs. permanent failure.
    fn post_once(&self, body: &ChatRequest<'_>) -> Result<ChatResponse, BackendError> {
        if let Some(limiter) = &self.limiter {
            limiter.acquire();
        }
        let mut req = self.client.post(&self.endpoint_url).json(body);
        if let Some(token) = self.bearer_token()? {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| {
            BackendError::Transient(format!("request to {}: {e}", self.endpoint_url))
        })?;
        let status = resp.status();
        if status.is_success() {
            return resp
                .json::<ChatResponse>()
                .map_err(|e| BackendError::MalformedReply(e.to_string()));
        }
        let text = resp.text().unwrap_or_default();
        let snippet: String = text.chars().take(200).collect();
        let msg = format!("{} returned {status}: {snippet}", self.endpoint_url);
        if status.as_u16() == 429 || status.is_server_error() {
            Err(BackendError::Transient(msg))
        } else {
            Err(BackendError::Permanent(msg))
        }
    }

    fn post_with_retries(&self, body: &ChatRequest<'_>) -> Result<ChatResponse, BackendError> {
        let mut last: Option<BackendError> = None;
        for attempt in 0..self.retry.max_attempts {
            match self.post_once(body) {
                Ok(resp) => return Ok(resp),
                Err(e) if e.is_transient() => {
                    last = Some(e);
                    if attempt + 1 < self.retry.max_attempts {
                        self.clock.sleep(self.retry.backoff(attempt));
                    }
                }
                Err(e) => return Err(e),
            }
        }
        Err(BackendError::RetriesExhausted {
            attempts: self.retry.max_attempts,
            last: Box::new(last.expect("loop ran at least once")),
        })
    }

    fn request_body<'a>(
        &'a self,
        prompt: &'a str,
        params: &'a GenParams,
        logprobs: bool,
    ) -> ChatRequest<'a> {
        ChatRequest {
            model: &self.model_name,
            messages: vec![ChatMessage { role: "user", content: prompt }],
            temperature: params.temperature,
            max_tokens: params.max_tokens,
            stop: if params.stop_sequences.is_empty() {
                None
            } else {
                Some(&params.stop_sequences)
            },
            seed: params.seed_hint,
            logprobs: logprobs.then_some(true),
            top_logprobs: logprobs.then_some(20),
        }
    }
}

/// Maps a candidate token to the answer label it spells, if any: the token
/// stripped of non-alphabetic characters must be a single letter, e.g.
/// `"A"`, `"(A"`, `" A"`, or `"A)"`.
fn token_label(token: &str) -> Option<char> {
    let mut letters = token.chars().filter(|c| c.is_ascii_alphabetic());
    match (letters.next(), letters.next()) {
        (Some(l), None) if l.is_ascii_uppercase() => Some(l),
        _ => None,
    }
}

impl CompletionBackend for HttpChatBackend {
    fn backend_id(&self) -> String {
        format!("http:{}", self.model_name)
    }

    fn complete(&self, prompt: &str, params: &GenParams) -> Result<ModelResponse, BackendError> {
        params.validate()?;
        if prompt.is_empty() {
            return Err(BackendError::InvalidParams("prompt must be non-empty".into()));
        }
        if let Some(capture) = &self.capture {
            capture.lock().unwrap().push(prompt.to_string());
        }
        let body = self.request_body(prompt, params, false);
        let start = Instant::now();
        let resp = self.post_with_retries(&body)?;
        let latency_ms = start.elapsed().as_secs_f64() * 1_000.0;
        let choice = resp
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::MalformedReply("reply has no choices".into()))?;
        let text = choice
            .message
            .content
            .ok_or_else(|| BackendError::MalformedReply("choice has no message content".into()))?;
        let usage = resp.usage.map_or(TokenUsage::default(), |u| TokenUsage {
            prompt_tokens: u.prompt_tokens,
            completion_tokens: u.completion_tokens,
        });
        Ok(ModelResponse {
            text,
            label_probs: None,
            latency_ms,
            token_usage: usage,
            backend_id: self.backend_id(),
        })
    }

    fn label_logprobs(
        &self,
        prompt: &str,
        params: &GenParams,
    ) -> Result<Option<BTreeMap<char, f64>>, BackendError> {
        let scoring_params = GenParams { max_tokens: params.max_tokens.min(8), ..params.clone() };
        let body = self.request_body(prompt, &scoring_params, true);
        let resp = self.post_with_retries(&body)?;
        let choice = resp
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::MalformedReply("reply has no choices".into()))?;
        let Some(logprobs) = choice.logprobs else {
            return Ok(None);
        };
        // First generated token that spells a letter is the answer position;
        // the label letter follows the trailing `"Answer: "` cue, usually as
        // part of a "(A"-style token.
        let answer_token = logprobs
            .content
            .iter()
            .find(|t| t.token.chars().any(|c| c.is_ascii_alphabetic()));
        let Some(answer_token) = answer_token else {
            return Ok(None);
        };
        let mut mass: BTreeMap<char, f64> = BTreeMap::new();
        let mut consider = |token: &str, logprob: f64| {
            if let Some(label) = token_label(token) {
                let p = logprob.exp();
                mass.entry(label)
                    .and_modify(|existing| *existing += p)
                    .or_insert(p);
            }
        };
        for top in &answer_token.top_logprobs {
            consider(&top.token, top.logprob);
        }
        if answer_token.top_logprobs.is_empty() {
            consider(&answer_token.token, answer_token.logprob);
        }
        if mass.is_empty() {
            return Ok(None);
        }
        Ok(Some(mass.into_iter().map(|(l, p)| (l, p.ln())).collect()))
    }
}
