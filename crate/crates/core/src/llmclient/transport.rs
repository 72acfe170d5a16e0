use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{conversation_hash, ChatMessage, LlmError, Role};
use crate::corpus::Label;
use crate::taxonomy::QueryKey;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatReply {
    pub content: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TransportFailure {
    Status { code: u16, body: String },
    Network(String),
    Timeout(String),
    /// Reply body not in the expected shape.
    Malformed(String),
    /// Mock transport has no response for this conversation.
    Unscripted(String),
}

impl TransportFailure {
    /// Timeouts, connection errors, 429 and 5xx are worth retrying.
    pub fn is_retryable(&self) -> bool {
        match self {
            Self::Network(_) | Self::Timeout(_) => true,
            Self::Status { code, .. } => *code == 429 || (500..600).contains(code),
            Self::Malformed(_) | Self::Unscripted(_) => false,
        }
    }
}

impl fmt::Display for TransportFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Status { code, body } if body.is_empty() => write!(f, "HTTP {code}"),
            Self::Status { code, body } => write!(f, "HTTP {code}: {body}"),
            Self::Network(m) => write!(f, "network: {m}"),
            Self::Timeout(m) => write!(f, "timeout: {m}"),
            Self::Malformed(m) => write!(f, "malformed reply: {m}"),
            Self::Unscripted(h) => write!(f, "no scripted response for prompt hash {h}"),
        }
    }
}

pub trait ChatTransport: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<ChatReply, TransportFailure>;
}

/// OpenAI-style `POST {endpoint}/chat/completions`.
pub struct HttpTransport {
    url: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(endpoint: &str, api_key: Option<String>, timeout: Duration) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| LlmError::Config(format!("HTTP client: {e}")))?;
        Ok(Self {
            url: format!("{}/chat/completions", endpoint.trim_end_matches('/')),
            api_key,
            client,
        })
    }
}

#[derive(Deserialize)]
struct CompletionBody {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ReplyMessage,
}

#[derive(Deserialize)]
struct ReplyMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize, Default)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl ChatTransport for HttpTransport {
    fn send(&self, request: &ChatRequest) -> Result<ChatReply, TransportFailure> {
        let mut builder = self.client.post(&self.url).json(request);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let resp = builder.send().map_err(|e| {
            if e.is_timeout() {
                TransportFailure::Timeout(e.to_string())
            } else {
                TransportFailure::Network(e.to_string())
            }
        })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| {
            if e.is_timeout() {
                TransportFailure::Timeout(e.to_string())
            } else {
                TransportFailure::Network(e.to_string())
            }
        })?;
        if !status.is_success() {
            return Err(TransportFailure::Status {
                code: status.as_u16(),
                body: text.chars().take(200).collect(),
            });
        }
        let body: CompletionBody =
            serde_json::from_str(&text).map_err(|e| TransportFailure::Malformed(e.to_string()))?;
        let content = body
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| TransportFailure::Malformed("no choices[0].message.content".into()))?;
        let usage = body.usage.unwrap_or_default();
        Ok(ChatReply {
            content,
            prompt_tokens: usage.prompt_tokens,
            completion_tokens: usage.completion_tokens,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockScriptEntry {
    pub prompt_hash: String,
    pub response: String,
}

/// Replays responses keyed by [`conversation_hash`].
#[derive(Debug, Clone, Default)]
pub struct MockTransport {
    responses: HashMap<String, String>,
}

impl MockTransport {
    pub fn from_entries(entries: impl IntoIterator<Item = MockScriptEntry>) -> Self {
        Self {
            responses: entries
                .into_iter()
                .map(|e| (e.prompt_hash, e.response))
                .collect(),
        }
    }

    /// Reads a JSON array of `{prompt_hash, response}` objects.
    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))?;
        let entries: Vec<MockScriptEntry> = serde_json::from_str(&text)
            .map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))?;
        Ok(Self::from_entries(entries))
    }
}

fn approx_tokens(text: &str) -> u64 {
    text.chars().count().div_ceil(4) as u64
}

fn prompt_tokens(messages: &[ChatMessage]) -> u64 {
    messages.iter().map(|m| approx_tokens(&m.content)).sum()
}

impl ChatTransport for MockTransport {
    fn send(&self, request: &ChatRequest) -> Result<ChatReply, TransportFailure> {
        let hash = conversation_hash(&request.messages);
        let content = self
            .responses
            .get(&hash)
            .cloned()
            .ok_or(TransportFailure::Unscripted(hash))?;
        Ok(ChatReply {
            completion_tokens: approx_tokens(&content),
            prompt_tokens: prompt_tokens(&request.messages),
            content,
        })
    }
}

/// Answers "Yes" or "No" according to the model verdict in the query key of
/// the latest user turn, so the end-to-end verdicts equal the provider's.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoTransport;

pub(crate) fn echo_reply(prompt: &str) -> String {
    match QueryKey::verdict_in(prompt) {
        Some(Label::Vulnerable) => {
            "Yes. The detection model and the reasoning chain point to a vulnerability.".into()
        }
        Some(Label::Benign) => "No. The detection model found no vulnerability.".into(),
        None => "Unable to determine from the given information.".into(),
    }
}

impl ChatTransport for EchoTransport {
    fn send(&self, request: &ChatRequest) -> Result<ChatReply, TransportFailure> {
        let last_user = request
            .messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or("");
        let content = echo_reply(last_user);
        Ok(ChatReply {
            completion_tokens: approx_tokens(&content),
            prompt_tokens: prompt_tokens(&request.messages),
            content,
        })
    }
}
