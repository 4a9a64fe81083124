//! Off-topic verdicts and the trigger element's hue.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendRequest, BackendResponse, Channel, PromptInputs, RequestIds};
use crate::ingest::Utterance;
use crate::prompts::offtopic_prompt;
use crate::Millis;

pub const NEUTRAL_RGB: [f64; 3] = [0.85, 0.85, 0.85];
pub const DEEP_RED_RGB: [f64; 3] = [0.80, 0.10, 0.10];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    /// The utterance deviates from the topic.
    Yes,
    No,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("not a yes/no verdict: {0:?}")]
pub struct VerdictParseError(pub String);

pub fn parse_verdict(raw: &str) -> Result<Verdict, VerdictParseError> {
    let word = raw
        .trim()
        .trim_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace() || "\u{201C}\u{201D}".contains(c));
    if word.eq_ignore_ascii_case("yes") {
        Ok(Verdict::Yes)
    } else if word.eq_ignore_ascii_case("no") {
        Ok(Verdict::No)
    } else {
        Err(VerdictParseError(raw.to_owned()))
    }
}

/// Unparseable answers count as on-topic so garbage never raises the alert.
pub fn verdict_or_no(raw: &str) -> (Verdict, bool) {
    match parse_verdict(raw) {
        Ok(v) => (v, false),
        Err(_) => (Verdict::No, true),
    }
}

/// `None` for the first utterance of a session: there is no thread yet.
pub fn build_offtopic_prompt(history: &[Utterance]) -> Option<String> {
    if history.len() < 2 {
        return None;
    }
    let current = history.last()?;
    Some(offtopic_prompt(&current.text, history))
}

pub fn level_to_color(level: f64) -> [f64; 3] {
    let t = if level.is_nan() { 0.0 } else { level.clamp(0.0, 1.0) };
    let mut rgb = [0.0; 3];
    for (i, c) in rgb.iter_mut().enumerate() {
        *c = NEUTRAL_RGB[i] * (1.0 - t) + DEEP_RED_RGB[i] * t;
    }
    rgb
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub utterance_id: u64,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unparsed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffTopicState {
    pub level: f64,
    /// Net "Yes" steps, kept within 0..=ramp_k.
    pub consecutive_hits: u32,
    pub ramp_k: u32,
    pub verdict_log: Vec<VerdictRecord>,
    /// request id -> utterance id
    pub pending: BTreeMap<u64, u64>,
}

impl OffTopicState {
    pub fn new(ramp_k: u32) -> Self {
        Self {
            level: 0.0,
            consecutive_hits: 0,
            ramp_k: ramp_k.max(1),
            verdict_log: Vec::new(),
            pending: BTreeMap::new(),
        }
    }

    /// One step per verdict: Yes deepens the hue by 1/K, No lightens it by 1/K.
    pub fn update_level(&mut self, verdict: Verdict) {
        self.consecutive_hits = match verdict {
            Verdict::Yes => (self.consecutive_hits + 1).min(self.ramp_k),
            Verdict::No => self.consecutive_hits.saturating_sub(1),
        };
        self.level = self.consecutive_hits as f64 / self.ramp_k as f64;
    }

    pub fn color(&self) -> [f64; 3] {
        level_to_color(self.level)
    }

    /// `history` must end with `utt`.
    pub fn on_utterance(
        &mut self,
        utt: &Utterance,
        history: &[Utterance],
        topic: &str,
        ids: &mut RequestIds,
        now: Millis,
    ) -> Option<BackendRequest> {
        let prompt = build_offtopic_prompt(history)?;
        let request_id = ids.next_id();
        self.pending.insert(request_id, utt.id);
        Some(BackendRequest {
            request_id,
            channel: Channel::OffTopic,
            prompt,
            issued_at_ms: now,
            inputs: PromptInputs::OffTopic {
                utterance_id: utt.id,
                current: utt.text.clone(),
                history: history.to_vec(),
                topic: topic.to_owned(),
            },
        })
    }

    /// Applies a verdict unless it is unknown or older than the latest one.
    pub fn apply_response(&mut self, resp: &BackendResponse) -> Option<VerdictRecord> {
        let utterance_id = self.pending.remove(&resp.request_id)?;
        if self.verdict_log.last().is_some_and(|last| utterance_id <= last.utterance_id) {
            return None;
        }
        let (verdict, unparsed) = verdict_or_no(&resp.text);
        self.update_level(verdict);
        let record = VerdictRecord {
            utterance_id,
            verdict,
            unparsed,
        };
        self.verdict_log.push(record);
        Some(record)
    }

    pub fn on_failure(&mut self, request_id: u64) {
        self.pending.remove(&request_id);
    }

    pub fn is_idle(&self) -> bool {
        self.pending.is_empty()
    }
}
