//! Chat-completion transports: HTTP, in-process mock, canned fixtures and a
//! guard that refuses every request.

use std::path::PathBuf;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::AgentError;
use crate::seed::fnv1a64;

pub const ENV_ENDPOINT: &str = "LLM_ENDPOINT";
pub const ENV_API_KEY: &str = "LLM_API_KEY";
pub const ENV_MODEL: &str = "LLM_MODEL";
pub const DEFAULT_TEMPERATURE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmRequest {
    pub endpoint: String,
    pub model: String,
    pub system: String,
    pub user: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: u64,
    pub retries: u32,
    /// First retry delay; doubles on every further attempt.
    pub backoff_ms: u64,
}

impl Default for LlmRequest {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            model: String::new(),
            system: String::new(),
            user: String::new(),
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: 2048,
            timeout_secs: 120,
            retries: 2,
            backoff_ms: 500,
        }
    }
}

impl LlmRequest {
    pub fn validate(&self) -> Result<(), AgentError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(AgentError::InvalidRequest(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        Ok(())
    }

    /// OpenAI-style chat body.
    pub fn body(&self) -> Value {
        json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": self.system},
                {"role": "user", "content": self.user},
            ],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        })
    }

    /// Stable key for fixture lookup: FNV-1a of the body JSON, in hex.
    pub fn fixture_key(&self) -> String {
        format!("{:016x}", fnv1a64(self.body().to_string().as_bytes()))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub text: String,
    pub usage: Usage,
    pub latency_ms: u64,
}

pub trait Transport: Send + Sync {
    fn send(&self, request: &LlmRequest) -> Result<LlmResponse, AgentError>;
}

/// Sends `request`, retrying transport failures with exponential backoff.
/// Makes at most `retries + 1` attempts.
pub fn llm_complete(transport: &dyn Transport, request: &LlmRequest) -> Result<LlmResponse, AgentError> {
    request.validate()?;
    let mut delay = Duration::from_millis(request.backoff_ms);
    let mut attempt = 0;
    loop {
        match transport.send(request) {
            Ok(r) => return Ok(r),
            Err(e) if e.is_retryable() && attempt < request.retries => {
                attempt += 1;
                std::thread::sleep(delay);
                delay *= 2;
            }
            Err(e) => {
                return Err(if attempt > 0 {
                    AgentError::RetriesExhausted { attempts: attempt + 1, last: Box::new(e) }
                } else {
                    e
                })
            }
        }
    }
}

/// Chat completions over HTTP POST with a JSON body.
#[derive(Debug, Clone, Default)]
pub struct HttpTransport {
    pub api_key: Option<String>,
}

impl HttpTransport {
    pub fn from_env() -> Self {
        Self { api_key: std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty()) }
    }
}

impl Transport for HttpTransport {
    fn send(&self, request: &LlmRequest) -> Result<LlmResponse, AgentError> {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(request.timeout_secs)))
            .http_status_as_error(false)
            .build();
        let agent = ureq::Agent::new_with_config(config);
        let start = Instant::now();
        let mut req = agent.post(&request.endpoint).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(request.body()).map_err(|e| match e {
            ureq::Error::Timeout(_) => AgentError::Timeout(request.timeout_secs),
            other => AgentError::Transport(other.to_string()),
        })?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| AgentError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(AgentError::Status { code: status, body: text.chars().take(500).collect() });
        }
        let mut out = parse_chat_body(&text)?;
        out.latency_ms = start.elapsed().as_millis() as u64;
        Ok(out)
    }
}

/// Extracts the assistant text and usage from a chat-completion body.
pub fn parse_chat_body(text: &str) -> Result<LlmResponse, AgentError> {
    let v: Value = serde_json::from_str(text).map_err(|e| AgentError::MalformedBody(e.to_string()))?;
    let content = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| AgentError::MalformedBody("missing choices[0].message.content".into()))?;
    let tokens = |k: &str| v.pointer(&format!("/usage/{k}")).and_then(Value::as_u64).unwrap_or(0);
    Ok(LlmResponse {
        text: content.to_string(),
        usage: Usage { prompt_tokens: tokens("prompt_tokens"), completion_tokens: tokens("completion_tokens") },
        latency_ms: 0,
    })
}

type Responder = Box<dyn Fn(&LlmRequest) -> Result<String, AgentError> + Send + Sync>;

/// In-process transport driven by a closure; keeps every request it saw.
pub struct MockTransport {
    responder: Responder,
    seen: Mutex<Vec<LlmRequest>>,
}

impl MockTransport {
    pub fn new(f: impl Fn(&LlmRequest) -> Result<String, AgentError> + Send + Sync + 'static) -> Self {
        Self { responder: Box::new(f), seen: Mutex::new(Vec::new()) }
    }

    /// Always answers with `text`.
    pub fn canned(text: impl Into<String>) -> Self {
        let text = text.into();
        Self::new(move |_| Ok(text.clone()))
    }

    pub fn requests(&self) -> Vec<LlmRequest> {
        self.seen.lock().expect("mock lock").clone()
    }
}

impl Transport for MockTransport {
    fn send(&self, request: &LlmRequest) -> Result<LlmResponse, AgentError> {
        self.seen.lock().expect("mock lock").push(request.clone());
        let text = (self.responder)(request)?;
        Ok(LlmResponse { text, usage: Usage::default(), latency_ms: 0 })
    }
}

/// Replays `<dir>/<fixture_key>.txt`.
#[derive(Debug, Clone)]
pub struct FixtureTransport {
    pub dir: PathBuf,
}

impl Transport for FixtureTransport {
    fn send(&self, request: &LlmRequest) -> Result<LlmResponse, AgentError> {
        let key = request.fixture_key();
        let path = self.dir.join(format!("{key}.txt"));
        let text = std::fs::read_to_string(&path)
            .map_err(|_| AgentError::FixtureMissing { key, dir: self.dir.display().to_string() })?;
        Ok(LlmResponse { text, usage: Usage::default(), latency_ms: 0 })
    }
}

/// Fails every request; bound in offline runs so any network use is loud.
#[derive(Debug, Clone, Copy, Default)]
pub struct DenyNetwork;

impl Transport for DenyNetwork {
    fn send(&self, request: &LlmRequest) -> Result<LlmResponse, AgentError> {
        Err(AgentError::NetworkDenied(request.endpoint.clone()))
    }
}
