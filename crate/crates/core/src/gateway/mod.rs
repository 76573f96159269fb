//! Chat access to LLM providers with live, record and replay modes.
//!
//! Every request goes through one [`Gateway`], which owns the rate limiter,
//! the token budget and the cassette. In replay mode no network is touched.

mod cassette;
mod limiter;
pub mod provider;

use std::collections::BTreeMap;
use std::fmt;
use std::io;
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, warn};

use crate::text::estimate_tokens;

pub use cassette::{transcript_key, Cassette, CassetteEntry};
pub use limiter::{Permit, RateLimiter};
pub use provider::{Provider, RoutedProvider};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("no cassette entry for key {key}")]
    ReplayMiss { key: String },
    #[error("provider returned status {status}: {body}")]
    Provider { status: u16, body: String },
    #[error("token budget exceeded: {used} used + {requested} requested > {ceiling}")]
    BudgetExceeded {
        used: u64,
        requested: u64,
        ceiling: u64,
    },
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("missing credential: set {var}")]
    MissingCredential { var: String },
    #[error("unknown provider for model {0:?}")]
    UnknownProvider(String),
    #[error("invalid transcript: {0}")]
    InvalidTranscript(String),
    #[error("cassette key {key} already holds a different request")]
    KeyCollision { key: String },
    #[error("cassette {path}: {source}")]
    Cassette {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("cassette {path} line {line}: {message}")]
    CassetteFormat {
        path: String,
        line: usize,
        message: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageTag {
    NlProof,
    Formalize,
    Fix,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTranscript {
    pub messages: Vec<ChatMessage>,
    pub stage_tags: BTreeMap<usize, StageTag>,
}

impl ChatTranscript {
    pub fn with_system(system: impl Into<String>) -> Self {
        Self {
            messages: vec![ChatMessage::new(Role::System, system)],
            stage_tags: BTreeMap::new(),
        }
    }

    pub fn push_user(&mut self, content: impl Into<String>, tag: StageTag) {
        self.stage_tags.insert(self.messages.len(), tag);
        self.messages.push(ChatMessage::new(Role::User, content));
    }

    pub fn push(&mut self, message: ChatMessage) {
        self.messages.push(message);
    }

    pub fn last(&self) -> Option<&ChatMessage> {
        self.messages.last()
    }

    /// Checks the role structure: leading system messages (at least one),
    /// then strictly alternating user and assistant turns, no empty content.
    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: &str| Err(GatewayError::InvalidTranscript(m.to_string()));
        if self.messages.first().map(|m| m.role) != Some(Role::System) {
            return bad("first message must be a system message");
        }
        if let Some(i) = self.messages.iter().position(|m| m.content.is_empty()) {
            return bad(&format!("message {i} is empty"));
        }
        let turns = self
            .messages
            .iter()
            .skip_while(|m| m.role == Role::System);
        for (i, m) in turns.enumerate() {
            let expected = if i % 2 == 0 { Role::User } else { Role::Assistant };
            if m.role != expected {
                return bad(&format!("turn {i} should be {}", expected.as_str()));
            }
        }
        Ok(())
    }

    pub fn estimated_tokens(&self) -> u64 {
        self.messages
            .iter()
            .map(|m| estimate_tokens(&m.content) as u64)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub model_id: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl GenerationParams {
    pub fn new(model_id: impl Into<String>) -> Self {
        Self {
            model_id: model_id.into(),
            temperature: 0.0,
            max_output_tokens: 4096,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Live,
    Record,
    Replay,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Live => "live",
            Mode::Record => "record",
            Mode::Replay => "replay",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(Mode::Live),
            "record" => Ok(Mode::Record),
            "replay" => Ok(Mode::Replay),
            other => Err(format!("unknown mode {other:?} (expected live, record or replay)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 5,
            base_delay: Duration::from_secs(2),
            max_delay: Duration::from_secs(60),
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, attempt: u32) -> Duration {
        self.base_delay
            .saturating_mul(2u32.saturating_pow(attempt))
            .min(self.max_delay)
    }
}

/// Cumulative token accounting against an optional ceiling.
#[derive(Debug, Default)]
struct Budget {
    ceiling: Option<u64>,
    used: Mutex<u64>,
}

impl Budget {
    /// Reserves the worst case for one request.
    fn reserve(&self, requested: u64) -> Result<(), GatewayError> {
        let mut used = self.used.lock().expect("budget lock");
        if let Some(ceiling) = self.ceiling {
            if *used + requested > ceiling {
                return Err(GatewayError::BudgetExceeded {
                    used: *used,
                    requested,
                    ceiling,
                });
            }
        }
        *used += requested;
        Ok(())
    }

    /// Replaces a reservation with the actual cost.
    fn settle(&self, reserved: u64, actual: u64) {
        let mut used = self.used.lock().expect("budget lock");
        *used = *used - reserved + actual.min(reserved);
    }
}

pub struct GatewayBuilder {
    mode: Mode,
    provider: Option<Arc<dyn Provider>>,
    cassette: Option<Cassette>,
    limiter: RateLimiter,
    retry: RetryPolicy,
    token_ceiling: Option<u64>,
}

impl GatewayBuilder {
    pub fn provider(mut self, provider: Arc<dyn Provider>) -> Self {
        self.provider = Some(provider);
        self
    }

    pub fn cassette(mut self, cassette: Cassette) -> Self {
        self.cassette = Some(cassette);
        self
    }

    pub fn limiter(mut self, limiter: RateLimiter) -> Self {
        self.limiter = limiter;
        self
    }

    pub fn retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn token_ceiling(mut self, ceiling: Option<u64>) -> Self {
        self.token_ceiling = ceiling;
        self
    }

    pub fn build(self) -> Gateway {
        Gateway {
            mode: self.mode,
            provider: self.provider,
            cassette: self.cassette,
            limiter: self.limiter,
            retry: self.retry,
            budget: Budget {
                ceiling: self.token_ceiling,
                used: Mutex::new(0),
            },
            misses: Mutex::new(Vec::new()),
            live_calls: Mutex::new(0),
        }
    }
}

/// Thread-safe chat front end shared by all workers.
pub struct Gateway {
    mode: Mode,
    provider: Option<Arc<dyn Provider>>,
    cassette: Option<Cassette>,
    limiter: RateLimiter,
    retry: RetryPolicy,
    budget: Budget,
    misses: Mutex<Vec<String>>,
    live_calls: Mutex<u64>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("mode", &self.mode)
            .field("cassette", &self.cassette.as_ref().map(Cassette::path))
            .finish()
    }
}

impl Gateway {
    pub fn builder(mode: Mode) -> GatewayBuilder {
        GatewayBuilder {
            mode,
            provider: None,
            cassette: None,
            limiter: RateLimiter::unlimited(),
            retry: RetryPolicy::default(),
            token_ceiling: None,
        }
    }

    /// A replay-only gateway over an existing cassette.
    pub fn replay(cassette: Cassette) -> Self {
        Self::builder(Mode::Replay).cassette(cassette).build()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn cassette(&self) -> Option<&Cassette> {
        self.cassette.as_ref()
    }

    pub fn tokens_used(&self) -> u64 {
        *self.budget.used.lock().expect("budget lock")
    }

    /// Number of requests that reached a provider.
    pub fn live_calls(&self) -> u64 {
        *self.live_calls.lock().expect("counter lock")
    }

    /// Keys requested in replay mode that the cassette did not hold.
    pub fn replay_misses(&self) -> Vec<String> {
        self.misses.lock().expect("miss lock").clone()
    }

    /// Sends `transcript`, which must end with a user message, and returns
    /// the assistant reply.
    pub fn chat(
        &self,
        transcript: &ChatTranscript,
        params: &GenerationParams,
    ) -> Result<ChatMessage, GatewayError> {
        transcript.validate()?;
        if transcript.last().map(|m| m.role) != Some(Role::User) {
            return Err(GatewayError::InvalidTranscript(
                "transcript must end with a user message".into(),
            ));
        }
        let key = transcript_key(&params.model_id, transcript);
        let reserved = transcript.estimated_tokens() + u64::from(params.max_output_tokens);
        self.budget.reserve(reserved)?;
        let result = self.dispatch(&key, transcript, params);
        let actual = match &result {
            Ok(text) => transcript.estimated_tokens() + estimate_tokens(text) as u64,
            Err(_) => 0,
        };
        self.budget.settle(reserved, actual);
        result.map(|text| ChatMessage::new(Role::Assistant, text))
    }

    fn dispatch(
        &self,
        key: &str,
        transcript: &ChatTranscript,
        params: &GenerationParams,
    ) -> Result<String, GatewayError> {
        match self.mode {
            Mode::Live => self.call_provider(transcript, params),
            Mode::Replay => {
                let cassette = self.cassette.as_ref().ok_or_else(|| miss(key))?;
                match cassette.get(key) {
                    Some(entry) => Ok(entry.response.clone()),
                    None => {
                        self.misses.lock().expect("miss lock").push(key.to_string());
                        Err(miss(key))
                    }
                }
            }
            Mode::Record => {
                let cassette = self.cassette.as_ref().ok_or_else(|| {
                    GatewayError::InvalidTranscript("record mode needs a cassette".into())
                })?;
                if let Some(entry) = cassette.get(key) {
                    debug!(key, "already recorded");
                    return Ok(entry.response.clone());
                }
                let response = self.call_provider(transcript, params)?;
                cassette.append(CassetteEntry::new(key, transcript, params, &response))?;
                Ok(response)
            }
        }
    }

    fn call_provider(
        &self,
        transcript: &ChatTranscript,
        params: &GenerationParams,
    ) -> Result<String, GatewayError> {
        let provider = self
            .provider
            .as_ref()
            .ok_or_else(|| GatewayError::UnknownProvider(params.model_id.clone()))?;
        let mut attempt = 0;
        loop {
            let result = {
                let _permit = self.limiter.acquire();
                *self.live_calls.lock().expect("counter lock") += 1;
                provider.complete(transcript, params)
            };
            match result {
                Err(GatewayError::RateLimited { .. }) if attempt < self.retry.max_retries => {
                    let delay = self.retry.delay(attempt);
                    warn!(attempt, ?delay, "rate limited, backing off");
                    thread::sleep(delay);
                    attempt += 1;
                }
                Err(GatewayError::RateLimited { .. }) => {
                    return Err(GatewayError::RateLimited {
                        attempts: attempt + 1,
                    })
                }
                other => return other,
            }
        }
    }
}

fn miss(key: &str) -> GatewayError {
    GatewayError::ReplayMiss {
        key: key.to_string(),
    }
}
