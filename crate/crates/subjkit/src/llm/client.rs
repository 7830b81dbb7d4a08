//! Chat backends.
//!
//! `RemoteChatClient` speaks a minimal JSON protocol: POST `{"messages":
//! [{"role", "content"}], "temperature", "max_tokens", "seed"}` and read
//! `{"content": "..."}` back (a few common response shapes are accepted).
//! `MockChatClient` answers from a script or deterministically from a hash
//! of the prompt, and records every request it sees.

use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::embed::{fnv1a64, splitmix64};

use super::{ChatMessage, GenerationParams, LlmError, Role};

pub trait ChatClient: Send + Sync {
    /// Sends one conversation and returns the assistant's text. `messages`
    /// must be non-empty and start with a system message.
    fn send(&self, messages: &[ChatMessage], params: &GenerationParams) -> Result<String, LlmError>;
}

fn validate_request(messages: &[ChatMessage], params: &GenerationParams) -> Result<(), LlmError> {
    params.validate()?;
    match messages.first() {
        None => Err(LlmError::InvalidRequest("no messages".to_owned())),
        Some(first) if first.role != Role::System => Err(LlmError::InvalidRequest(
            "the first message must be the system message".to_owned(),
        )),
        Some(_) => {
            if messages.iter().any(|m| m.content.trim().is_empty()) {
                return Err(LlmError::InvalidRequest("empty message content".to_owned()));
            }
            Ok(())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatClientKind {
    Remote,
    Mock,
}

fn default_chat_retries() -> u32 {
    2
}

fn default_chat_backoff_ms() -> u64 {
    500
}

fn default_chat_timeout_s() -> u64 {
    60
}

/// Declarative client selection, loadable from TOML. The API key is not part
/// of this struct on purpose: it comes from the environment.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatClientConfig {
    pub backend: ChatClientKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default = "default_chat_retries")]
    pub retries: u32,
    #[serde(default = "default_chat_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_chat_timeout_s")]
    pub timeout_s: u64,
    /// Scripted mock responses, consumed in order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mock_script: Vec<String>,
    /// Seed for the derived mock mode, used when the script is empty.
    /// Absent means inherit the experiment seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock_seed: Option<u64>,
}

impl ChatClientConfig {
    pub fn mock_derived(seed: u64) -> Self {
        Self {
            backend: ChatClientKind::Mock,
            endpoint: None,
            retries: default_chat_retries(),
            backoff_ms: default_chat_backoff_ms(),
            timeout_s: default_chat_timeout_s(),
            mock_script: Vec::new(),
            mock_seed: Some(seed),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self, LlmError> {
        toml::from_str(s).map_err(|e| LlmError::InvalidRequest(format!("client config: {e}")))
    }

    pub fn from_toml_path(path: &std::path::Path) -> Result<Self, LlmError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Builds the configured client. `api_key` applies to the remote kind.
    pub fn build(&self, api_key: Option<String>) -> Result<Box<dyn ChatClient>, LlmError> {
        match self.backend {
            ChatClientKind::Remote => {
                let endpoint = self.endpoint.clone().ok_or_else(|| {
                    LlmError::InvalidRequest("remote client requires an endpoint".to_owned())
                })?;
                Ok(Box::new(RemoteChatClient {
                    endpoint,
                    api_key,
                    retries: self.retries,
                    backoff_ms: self.backoff_ms,
                    agent: agent_with_timeout(self.timeout_s),
                }))
            }
            ChatClientKind::Mock => {
                if self.mock_script.is_empty() {
                    Ok(Box::new(MockChatClient::derived(self.mock_seed.unwrap_or(0))))
                } else {
                    Ok(Box::new(MockChatClient::scripted(self.mock_script.clone())))
                }
            }
        }
    }
}

fn agent_with_timeout(timeout_s: u64) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(timeout_s)))
        .build()
        .into()
}

pub struct RemoteChatClient {
    endpoint: String,
    api_key: Option<String>,
    retries: u32,
    backoff_ms: u64,
    agent: ureq::Agent,
}

impl RemoteChatClient {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key: None,
            retries: default_chat_retries(),
            backoff_ms: default_chat_backoff_ms(),
            agent: agent_with_timeout(default_chat_timeout_s()),
        }
    }

    pub fn with_api_key(mut self, key: impl Into<String>) -> Self {
        self.api_key = Some(key.into());
        self
    }

    pub fn with_retries(mut self, retries: u32, backoff_ms: u64) -> Self {
        self.retries = retries;
        self.backoff_ms = backoff_ms;
        self
    }

    fn extract_content(body: &Value) -> Option<String> {
        if let Some(s) = body.get("content").and_then(Value::as_str) {
            return Some(s.to_owned());
        }
        if let Some(s) = body
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
        {
            return Some(s.to_owned());
        }
        if let Some(s) = body.pointer("/message/content").and_then(Value::as_str) {
            return Some(s.to_owned());
        }
        body.get("response").and_then(Value::as_str).map(str::to_owned)
    }
}

impl ChatClient for RemoteChatClient {
    fn send(&self, messages: &[ChatMessage], params: &GenerationParams) -> Result<String, LlmError> {
        validate_request(messages, params)?;
        let mut payload = serde_json::json!({
            "messages": messages,
            "temperature": params.temperature,
            "max_tokens": params.max_new_tokens,
        });
        if let Some(seed) = params.seed {
            payload["seed"] = seed.into();
        }

        let mut attempt = 0u32;
        loop {
            attempt += 1;
            let mut request = self.agent.post(&self.endpoint);
            if let Some(key) = &self.api_key {
                request = request.header("authorization", &format!("Bearer {key}"));
            }
            match request.send_json(&payload) {
                Ok(mut response) => {
                    let body: Value = response.body_mut().read_json().map_err(|e| {
                        LlmError::Backend(format!("unreadable response body: {e}"))
                    })?;
                    return Self::extract_content(&body).ok_or_else(|| {
                        LlmError::Backend("response carries no content field".to_owned())
                    });
                }
                Err(err) => {
                    let rate_limited = matches!(err, ureq::Error::StatusCode(429));
                    let transient = rate_limited
                        || matches!(
                            err,
                            ureq::Error::StatusCode(code) if code >= 500
                        )
                        || matches!(
                            err,
                            ureq::Error::Timeout(_) | ureq::Error::Io(_) | ureq::Error::ConnectionFailed
                        );
                    if transient && attempt <= self.retries {
                        let wait = self.backoff_ms.saturating_mul(1 << (attempt - 1));
                        std::thread::sleep(Duration::from_millis(wait));
                        continue;
                    }
                    if rate_limited {
                        return Err(LlmError::RateLimited { attempts: attempt });
                    }
                    return Err(LlmError::Backend(err.to_string()));
                }
            }
        }
    }
}

enum MockMode {
    Scripted(Mutex<VecDeque<String>>, usize),
    Derived(u64),
}

/// Test and dry-run double. Scripted mode pops canned responses in order;
/// derived mode computes a response from a hash of the request, so equal
/// prompts always get equal answers without any shared state.
pub struct MockChatClient {
    mode: MockMode,
    calls: Mutex<Vec<Vec<ChatMessage>>>,
}

impl MockChatClient {
    pub fn scripted<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let script: VecDeque<String> = responses.into_iter().map(Into::into).collect();
        let len = script.len();
        Self {
            mode: MockMode::Scripted(Mutex::new(script), len),
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn derived(seed: u64) -> Self {
        Self {
            mode: MockMode::Derived(seed),
            calls: Mutex::new(Vec::new()),
        }
    }

    /// Every request seen so far, in order.
    pub fn calls(&self) -> Vec<Vec<ChatMessage>> {
        self.calls.lock().expect("calls poisoned").clone()
    }

    fn derive_response(seed: u64, messages: &[ChatMessage]) -> String {
        let mut h = seed;
        for m in messages {
            h = splitmix64(h ^ fnv1a64(m.content.as_bytes()) ^ m.role as u64);
        }
        // Honor an "exactly {n}" instruction so constrained prompts behave;
        // otherwise pick a small count from the hash.
        let system = &messages[0].content;
        let count = requested_count(system)
            .unwrap_or_else(|| 3 + (h % 4) as u32)
            .clamp(1, 24) as usize;

        const HEADS: [&str; 12] = [
            "archives", "bibliography", "catalogs", "digital libraries", "education",
            "history", "indexing", "information retrieval", "metadata", "natural language",
            "subject access", "taxonomy",
        ];
        const MODS: [&str; 8] = [
            "analysis", "methods", "policy", "practice", "research", "standards",
            "studies", "theory",
        ];
        let mut labels = Vec::with_capacity(count);
        let mut state = h;
        while labels.len() < count {
            state = splitmix64(state);
            let head = HEADS[(state % HEADS.len() as u64) as usize];
            let modifier = MODS[((state >> 8) % MODS.len() as u64) as usize];
            let label = format!("{head} {modifier}");
            if !labels.contains(&label) {
                labels.push(label);
            }
        }
        labels.join(", ")
    }
}

/// Finds "exactly N" or "Predict N additional" in an instruction.
fn requested_count(text: &str) -> Option<u32> {
    let lowered = text.to_ascii_lowercase();
    for pattern in ["exactly ", "predict "] {
        if let Some(pos) = lowered.find(pattern) {
            let tail = &lowered[pos + pattern.len()..];
            let digits: String = tail.chars().take_while(char::is_ascii_digit).collect();
            if !digits.is_empty() {
                return digits.parse().ok();
            }
        }
    }
    None
}

impl ChatClient for MockChatClient {
    fn send(&self, messages: &[ChatMessage], params: &GenerationParams) -> Result<String, LlmError> {
        validate_request(messages, params)?;
        self.calls
            .lock()
            .expect("calls poisoned")
            .push(messages.to_vec());
        match &self.mode {
            MockMode::Scripted(script, len) => script
                .lock()
                .expect("script poisoned")
                .pop_front()
                .ok_or(LlmError::ScriptExhausted(*len)),
            MockMode::Derived(seed) => Ok(Self::derive_response(*seed, messages)),
        }
    }
}
