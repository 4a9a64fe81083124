//! Asynchronous language-model transports.

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use parley_core::backend::{BackendErrorKind, BackendRequest, MockBackend};
use parley_core::settings::{HttpSettings, MockSettings};
use serde::{Deserialize, Serialize};
use serde_json::json;

#[async_trait]
pub trait Backend: Send + Sync {
    /// The raw model text for `request`.
    async fn complete(&self, request: &BackendRequest) -> Result<String, BackendErrorKind>;
}

/// The offline oracle, delayed by its synthetic latency.
pub struct MockTransport {
    mock: MockBackend,
}

impl MockTransport {
    pub fn new(seed: u64, settings: MockSettings) -> Self {
        Self {
            mock: MockBackend::new(seed, settings),
        }
    }
}

#[async_trait]
impl Backend for MockTransport {
    async fn complete(&self, request: &BackendRequest) -> Result<String, BackendErrorKind> {
        let (text, latency) = self.mock.respond(request);
        tokio::time::sleep(Duration::from_millis(latency)).await;
        Ok(text)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ChatMessage {
    role: String,
    content: String,
}

#[derive(Debug, Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Debug, Deserialize)]
struct ChatCompletion {
    choices: Vec<ChatChoice>,
}

/// A chat-completion client. Each prompt goes out as one user message at
/// temperature 0.
pub struct HttpBackend {
    client: reqwest::Client,
    settings: HttpSettings,
    api_key: Option<String>,
}

impl HttpBackend {
    pub fn new(settings: HttpSettings, api_key: Option<String>) -> reqwest::Result<Self> {
        let client = reqwest::Client::builder()
            .timeout(Duration::from_millis(settings.timeout_ms))
            .build()?;
        Ok(Self {
            client,
            settings,
            api_key,
        })
    }

    /// Applies `LLM_API_URL`, `LLM_MODEL` and `LLM_API_KEY` over `settings`.
    pub fn from_env(mut settings: HttpSettings) -> reqwest::Result<Self> {
        if let Ok(url) = std::env::var("LLM_API_URL") {
            settings.url = url;
        }
        if let Ok(model) = std::env::var("LLM_MODEL") {
            settings.model = model;
        }
        Self::new(settings, std::env::var("LLM_API_KEY").ok())
    }

    pub fn request_body(&self, prompt: &str) -> serde_json::Value {
        json!({
            "model": self.settings.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        })
    }
}

fn classify(err: &reqwest::Error) -> BackendErrorKind {
    if err.is_timeout() {
        BackendErrorKind::Timeout
    } else if err.status() == Some(reqwest::StatusCode::TOO_MANY_REQUESTS) {
        BackendErrorKind::RateLimited
    } else {
        BackendErrorKind::Transport
    }
}

#[async_trait]
impl Backend for HttpBackend {
    async fn complete(&self, request: &BackendRequest) -> Result<String, BackendErrorKind> {
        let mut req = self.client.post(&self.settings.url).json(&self.request_body(&request.prompt));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().await.map_err(|e| classify(&e))?;
        let resp = resp.error_for_status().map_err(|e| classify(&e))?;
        let body: ChatCompletion = resp.json().await.map_err(|e| classify(&e))?;
        body.choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or(BackendErrorKind::Transport)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum BackendKind {
    Mock,
    Http,
}

pub fn build(kind: BackendKind, seed: u64, mock: MockSettings, http: HttpSettings) -> anyhow::Result<Arc<dyn Backend>> {
    Ok(match kind {
        BackendKind::Mock => Arc::new(MockTransport::new(seed, mock)),
        BackendKind::Http => Arc::new(HttpBackend::from_env(http)?),
    })
}
