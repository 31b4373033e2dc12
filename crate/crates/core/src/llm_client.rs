//! Text-generation backends: an Ollama-compatible HTTP client and a scripted
//! backend that replays canned replies.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_STEP_MAX_TOKENS: u32 = 512;
pub const DEFAULT_ONESHOT_MAX_TOKENS: u32 = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("connection failed: {0}")]
    ConnectionFailed(String),
    #[error("server returned {status}: {body}")]
    ServerError { status: u16, body: String },
    #[error("scripted backend has no replies left")]
    ScriptExhausted,
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub model: String,
    pub prompt: String,
    pub temperature: f64,
    pub seed: u64,
    pub max_tokens: u32,
    pub timeout: Duration,
}

impl GenerationRequest {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.prompt.is_empty() {
            return Err(LlmError::InvalidRequest("empty prompt".into()));
        }
        if self.timeout.is_zero() {
            return Err(LlmError::InvalidRequest("zero timeout".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(LlmError::InvalidRequest(format!(
                "temperature {} is negative",
                self.temperature
            )));
        }
        Ok(())
    }

    /// Short stable digest of model and prompt, used to correlate log lines.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.model.as_bytes());
        h.update([0u8]);
        h.update(self.prompt.as_bytes());
        h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationResponse {
    pub text: String,
    pub prompt_token_count: Option<u64>,
    pub output_token_count: Option<u64>,
    pub latency: Duration,
}

pub trait Backend: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, LlmError>;

    fn describe(&self) -> String;
}

/// Validates, dispatches and logs one generation call.
pub fn generate(backend: &dyn Backend, request: &GenerationRequest) -> Result<GenerationResponse, LlmError> {
    request.validate()?;
    let started = Instant::now();
    let result = backend.generate(request);
    let latency = started.elapsed();
    match &result {
        Ok(r) => tracing::debug!(
            backend = %backend.describe(),
            request = %request.hash(),
            latency_ms = latency.as_millis() as u64,
            chars = r.text.len(),
            "generation ok"
        ),
        Err(e) => tracing::warn!(
            backend = %backend.describe(),
            request = %request.hash(),
            latency_ms = latency.as_millis() as u64,
            error = %e,
            "generation failed"
        ),
    }
    result
}

#[derive(Serialize)]
struct WireOptions {
    temperature: f64,
    seed: u64,
    num_predict: u32,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    stream: bool,
    options: WireOptions,
}

#[derive(Deserialize)]
struct WireResponse {
    response: String,
    #[serde(default)]
    prompt_eval_count: Option<u64>,
    #[serde(default)]
    eval_count: Option<u64>,
}

/// Non-streaming client for an Ollama-style `/api/generate` endpoint.
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    url: String,
}

impl HttpBackend {
    pub fn new(endpoint: &str, path: &str) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| LlmError::ConnectionFailed(e.to_string()))?;
        let url = format!(
            "{}/{}",
            endpoint.trim_end_matches('/'),
            path.trim_start_matches('/')
        );
        Ok(Self { client, url })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn wire_body(request: &GenerationRequest) -> serde_json::Value {
        serde_json::to_value(WireRequest {
            model: &request.model,
            prompt: &request.prompt,
            stream: false,
            options: WireOptions {
                temperature: request.temperature,
                seed: request.seed,
                num_predict: request.max_tokens,
            },
        })
        .expect("wire request serializes")
    }
}

impl Backend for HttpBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, LlmError> {
        let started = Instant::now();
        let classify = |e: reqwest::Error| {
            if e.is_timeout() {
                LlmError::Timeout(request.timeout)
            } else if e.is_connect() || e.is_request() {
                LlmError::ConnectionFailed(e.to_string())
            } else {
                LlmError::MalformedResponse(e.to_string())
            }
        };
        let resp = self
            .client
            .post(&self.url)
            .timeout(request.timeout)
            .json(&Self::wire_body(request))
            .send()
            .map_err(classify)?;
        let status = resp.status();
        let body = resp.text().map_err(classify)?;
        if !status.is_success() {
            return Err(LlmError::ServerError {
                status: status.as_u16(),
                body,
            });
        }
        let wire: WireResponse =
            serde_json::from_str(&body).map_err(|e| LlmError::MalformedResponse(e.to_string()))?;
        Ok(GenerationResponse {
            text: wire.response,
            prompt_token_count: wire.prompt_eval_count,
            output_token_count: wire.eval_count,
            latency: started.elapsed(),
        })
    }

    fn describe(&self) -> String {
        format!("http {}", self.url)
    }
}

/// Replays canned replies. Keyed replies match on a prompt substring and are
/// not consumed; otherwise replies are served first-in first-out.
#[derive(Default)]
pub struct ScriptedBackend {
    queue: Mutex<VecDeque<String>>,
    keyed: Vec<(String, String)>,
    calls: AtomicUsize,
}

impl ScriptedBackend {
    pub fn new<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            queue: Mutex::new(replies.into_iter().map(Into::into).collect()),
            ..Default::default()
        }
    }

    pub fn with_keyed(mut self, needle: impl Into<String>, reply: impl Into<String>) -> Self {
        self.keyed.push((needle.into(), reply.into()));
        self
    }

    pub fn push(&self, reply: impl Into<String>) {
        self.queue.lock().expect("script lock").push_back(reply.into());
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().expect("script lock").len()
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Backend for ScriptedBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let text = match self.keyed.iter().find(|(k, _)| request.prompt.contains(k.as_str())) {
            Some((_, reply)) => reply.clone(),
            None => self
                .queue
                .lock()
                .expect("script lock")
                .pop_front()
                .ok_or(LlmError::ScriptExhausted)?,
        };
        Ok(GenerationResponse {
            text,
            prompt_token_count: None,
            output_token_count: None,
            latency: Duration::ZERO,
        })
    }

    fn describe(&self) -> String {
        "scripted".into()
    }
}
