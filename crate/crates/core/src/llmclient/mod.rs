//! Chat-completion client with bounded concurrency, optional rate limiting,
//! retry with exponential backoff, and deterministic offline transports.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::sync::{Semaphore, TokenBucket};

mod transport;
mod verdict;

pub use transport::{
    ChatReply, ChatRequest, ChatTransport, EchoTransport, HttpTransport, MockScriptEntry,
    MockTransport, TransportFailure,
};
pub use verdict::{parse_verdict, parse_verdict_text, Decision, UnparseablePolicy, Verdict};

/// System persona for every detection conversation.
pub const DETECTION_PERSONA: &str = "I want you to act as a Vulnerability Detection System.";

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("LLM transport failed after {attempts} attempt(s): {}", .log.join("; "))]
    Transport { attempts: u32, log: Vec<String> },
    #[error("LLM protocol error: {0}")]
    Protocol(String),
    #[error("LLM configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// Hex SHA-256 of a prompt; the key for scripted mock responses.
pub fn prompt_hash(prompt: &str) -> String {
    let digest = Sha256::digest(prompt.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of the non-system turns joined by `"\n\u{1e}\n"`; equals
/// [`prompt_hash`] for a single-turn conversation.
pub fn conversation_hash(messages: &[ChatMessage]) -> String {
    let joined = messages
        .iter()
        .filter(|m| m.role != Role::System)
        .map(|m| m.content.as_str())
        .collect::<Vec<_>>()
        .join("\n\u{1e}\n");
    prompt_hash(&joined)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
    pub backoff_max_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 4,
            backoff_base_ms: 500,
            backoff_max_ms: 30_000,
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `attempt + 1` (attempt is 1-based).
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64 << (attempt.saturating_sub(1)).min(20);
        Duration::from_millis(
            self.backoff_base_ms
                .saturating_mul(factor)
                .min(self.backoff_max_ms),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TransportConfig {
    /// Real chat-completions endpoint.
    Live,
    /// Replays responses keyed by prompt hash.
    Mock { script: PathBuf },
    /// Answers with the model verdict carried in the prompt's query key.
    MockEcho,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_ms: u64,
    pub max_in_flight: usize,
    /// Optional request rate cap.
    pub requests_per_minute: Option<f64>,
    pub retry: RetryPolicy,
    pub transport: TransportConfig,
    /// Environment variable holding the API key (live transport only).
    pub api_key_env: String,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1".into(),
            model: "gpt-3.5-turbo-0125".into(),
            temperature: 0.0,
            max_tokens: 1024,
            timeout_ms: 60_000,
            max_in_flight: 4,
            requests_per_minute: None,
            retry: RetryPolicy::default(),
            transport: TransportConfig::MockEcho,
            api_key_env: "OPENAI_API_KEY".into(),
        }
    }
}

impl LlmConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(LlmError::Config(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.retry.max_attempts == 0 {
            return Err(LlmError::Config("retry.max_attempts must be >= 1".into()));
        }
        if self.max_in_flight == 0 {
            return Err(LlmError::Config("max_in_flight must be >= 1".into()));
        }
        if let Some(rpm) = self.requests_per_minute {
            if !(rpm.is_finite() && rpm > 0.0) {
                return Err(LlmError::Config("requests_per_minute must be > 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    #[serde(skip)]
    pub latency: Duration,
    pub attempts: u32,
}

/// Shareable client; every request holds one in-flight permit for its
/// whole retry sequence.
pub struct LlmClient {
    config: LlmConfig,
    transport: Arc<dyn ChatTransport>,
    in_flight: Semaphore,
    bucket: Option<TokenBucket>,
}

impl std::fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmClient")
            .field("model", &self.config.model)
            .field("transport", &self.config.transport)
            .finish()
    }
}

impl LlmClient {
    /// Builds the transport named by the configuration.
    pub fn from_config(config: LlmConfig) -> Result<Self, LlmError> {
        config.validate()?;
        let transport: Arc<dyn ChatTransport> = match &config.transport {
            TransportConfig::Live => {
                let key = std::env::var(&config.api_key_env).map_err(|_| {
                    LlmError::Config(format!(
                        "environment variable {} is not set",
                        config.api_key_env
                    ))
                })?;
                Arc::new(HttpTransport::new(
                    &config.endpoint,
                    Some(key),
                    Duration::from_millis(config.timeout_ms),
                )?)
            }
            TransportConfig::Mock { script } => Arc::new(MockTransport::load(script)?),
            TransportConfig::MockEcho => Arc::new(EchoTransport),
        };
        Self::with_transport(config, transport)
    }

    pub fn with_transport(
        config: LlmConfig,
        transport: Arc<dyn ChatTransport>,
    ) -> Result<Self, LlmError> {
        config.validate()?;
        let bucket = config
            .requests_per_minute
            .map(|rpm| TokenBucket::new(rpm / 60.0, config.max_in_flight));
        Ok(Self {
            in_flight: Semaphore::new(config.max_in_flight),
            bucket,
            transport,
            config,
        })
    }

    pub fn config(&self) -> &LlmConfig {
        &self.config
    }

    /// One detection round trip: persona as system turn, `prompt` as user turn.
    pub fn detect(&self, prompt: &str) -> Result<LlmResponse, LlmError> {
        self.complete(&[
            ChatMessage::system(DETECTION_PERSONA),
            ChatMessage::user(prompt),
        ])
    }

    /// Sends user turns in order, feeding each reply back as an assistant
    /// turn. Returns one response per turn.
    pub fn converse(&self, turns: &[String]) -> Result<Vec<LlmResponse>, LlmError> {
        let mut messages = vec![ChatMessage::system(DETECTION_PERSONA)];
        let mut out = Vec::with_capacity(turns.len());
        for turn in turns {
            messages.push(ChatMessage::user(turn.clone()));
            let resp = self.complete(&messages)?;
            messages.push(ChatMessage::assistant(resp.text.clone()));
            out.push(resp);
        }
        Ok(out)
    }

    pub fn complete(&self, messages: &[ChatMessage]) -> Result<LlmResponse, LlmError> {
        let request = ChatRequest {
            model: self.config.model.clone(),
            messages: messages.to_vec(),
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
        };
        let _permit = self.in_flight.acquire();
        let start = Instant::now();
        let mut log = Vec::new();
        let max = self.config.retry.max_attempts;
        for attempt in 1..=max {
            if let Some(bucket) = &self.bucket {
                bucket.take();
            }
            match self.transport.send(&request) {
                Ok(reply) => {
                    return Ok(LlmResponse {
                        text: reply.content,
                        prompt_tokens: reply.prompt_tokens,
                        completion_tokens: reply.completion_tokens,
                        latency: start.elapsed(),
                        attempts: attempt,
                    })
                }
                Err(failure) if failure.is_retryable() => {
                    log.push(format!("attempt {attempt}: {failure}"));
                    if attempt < max {
                        std::thread::sleep(self.config.retry.backoff(attempt));
                    }
                }
                Err(failure) => {
                    return Err(LlmError::Protocol(format!("attempt {attempt}: {failure}")))
                }
            }
        }
        Err(LlmError::Transport {
            attempts: max,
            log,
        })
    }
}
