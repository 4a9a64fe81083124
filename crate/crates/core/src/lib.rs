//! Deterministic engine for real-time conversation support.
//!
//! A session is a pure reducer over [`session::SessionEvent`]s. Three assist
//! channels hang off it: chained keyword summaries for each speaker, a
//! fixed-cadence phrase suggester and a per-utterance off-topic verdict that
//! drives the trigger element's hue. The language model sits behind
//! [`backend`]; [`backend::MockBackend`] answers offline so whole sessions can
//! be replayed bit-for-bit and measured with [`metrics`].

pub mod backend;
pub mod batch;
pub mod ingest;
pub mod metrics;
pub mod offtopic;
pub mod prompts;
pub mod session;
pub mod settings;
pub mod simulate;
pub mod suggest;
pub mod summarize;
pub mod synth;
pub mod text;

/// Session-clock milliseconds.
pub type Millis = u64;

/// Conversation topics bundled with the crate, as JSON.
pub const TOPICS_JSON: &str = include_str!("../data/topics.json");

/// A roughly seven-minute sample conversation with off-topic annotations.
pub const SAMPLE_TRANSCRIPT: &str = include_str!("../data/sample_topic1.ndjson");
