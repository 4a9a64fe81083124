//! Language-model boundary: correlated requests and responses.
//!
//! Transports live outside this crate; the mock in [`mock`] answers from the
//! structured [`PromptInputs`] so the whole engine runs offline.

pub mod mock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::Utterance;
use crate::Millis;

pub use mock::{mock_offtopic, mock_suggest, mock_summarize, MockBackend};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    SelfSummary,
    OtherSummary,
    Suggestion,
    OffTopic,
}

impl Channel {
    pub const ALL: [Channel; 4] = [
        Channel::SelfSummary,
        Channel::OtherSummary,
        Channel::Suggestion,
        Channel::OffTopic,
    ];
}

/// The inputs a prompt was built from. HTTP transports ignore these and send
/// only [`BackendRequest::prompt`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PromptInputs {
    Summary {
        utterance_id: u64,
        recent: String,
        previous: Vec<String>,
        base_version: u64,
        retry: bool,
    },
    Suggestion {
        current: String,
        history: Vec<Utterance>,
    },
    OffTopic {
        utterance_id: u64,
        current: String,
        history: Vec<Utterance>,
        topic: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendRequest {
    pub request_id: u64,
    pub channel: Channel,
    pub prompt: String,
    pub issued_at_ms: Millis,
    pub inputs: PromptInputs,
}

impl BackendRequest {
    /// The utterance this request concerns, for channels that have one.
    pub fn utterance_id(&self) -> Option<u64> {
        match &self.inputs {
            PromptInputs::Summary { utterance_id, .. } | PromptInputs::OffTopic { utterance_id, .. } => {
                Some(*utterance_id)
            }
            PromptInputs::Suggestion { .. } => None,
        }
    }

    pub fn respond(&self, text: impl Into<String>, latency_ms: Millis) -> BackendResponse {
        BackendResponse {
            request_id: self.request_id,
            channel: self.channel,
            utterance_id: self.utterance_id(),
            text: text.into(),
            latency_ms,
        }
    }

    pub fn fail(&self, error: BackendErrorKind, latency_ms: Millis) -> BackendFailure {
        BackendFailure {
            request_id: self.request_id,
            channel: self.channel,
            error,
            latency_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendResponse {
    pub request_id: u64,
    pub channel: Channel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utterance_id: Option<u64>,
    pub text: String,
    pub latency_ms: Millis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Error)]
#[serde(rename_all = "snake_case")]
pub enum BackendErrorKind {
    #[error("request timed out")]
    Timeout,
    #[error("transport error")]
    Transport,
    #[error("rate limited")]
    RateLimited,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendFailure {
    pub request_id: u64,
    pub channel: Channel,
    pub error: BackendErrorKind,
    pub latency_ms: Millis,
}

/// Globally monotonic request ids shared by all channels of a session.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RequestIds(u64);

impl RequestIds {
    pub fn next_id(&mut self) -> u64 {
        self.0 += 1;
        self.0
    }

    /// Highest id issued so far (0 when none).
    pub fn last(&self) -> u64 {
        self.0
    }

    pub fn was_issued(&self, id: u64) -> bool {
        id >= 1 && id <= self.0
    }
}
