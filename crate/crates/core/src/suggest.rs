//! Word-suggestion channel: fixed-cadence requests over the full dialogue
//! history, applied last-write-wins by request id.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendRequest, BackendResponse, Channel, PromptInputs, RequestIds};
use crate::ingest::Utterance;
use crate::prompts::suggestion_prompt;
use crate::Millis;

pub const MAX_WORDS: usize = 6;
const SENTENCE_MIN_TOKENS: usize = 3;
const QUOTES: &[char] = &['"', '\'', '\u{201C}', '\u{201D}', '\u{2018}', '\u{2019}', '`'];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum SuggestionValidationError {
    #[error("suggestion is empty")]
    Empty,
    #[error("suggestion has {0} words, at most {MAX_WORDS} allowed")]
    TooLong(usize),
    #[error("suggestion reads as a complete sentence")]
    LooksLikeSentence,
}

pub fn validate_suggestion(raw: &str) -> Result<Vec<String>, SuggestionValidationError> {
    let text = raw.trim().trim_matches(QUOTES).trim();
    let words: Vec<String> = text.split_whitespace().map(str::to_owned).collect();
    if words.is_empty() {
        return Err(SuggestionValidationError::Empty);
    }
    if words.len() >= SENTENCE_MIN_TOKENS && text.ends_with(['.', '!', '?']) {
        return Err(SuggestionValidationError::LooksLikeSentence);
    }
    if words.len() > MAX_WORDS {
        return Err(SuggestionValidationError::TooLong(words.len()));
    }
    Ok(words)
}

/// `None` when there is nothing to continue yet.
pub fn build_suggestion_prompt(history: &[Utterance]) -> Option<String> {
    let current = history.last()?;
    Some(suggestion_prompt(&current.text, history))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuggestionState {
    pub words: Vec<String>,
    pub last_applied_request_id: u64,
    pub next_due_ms: Millis,
    /// request id -> issue time
    pub in_flight: BTreeMap<u64, Millis>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TickOutcome {
    pub request: Option<BackendRequest>,
    pub cancelled: Vec<u64>,
}

impl SuggestionState {
    pub fn new(start_ms: Millis) -> Self {
        Self {
            words: Vec::new(),
            last_applied_request_id: 0,
            next_due_ms: start_ms,
            in_flight: BTreeMap::new(),
        }
    }

    pub fn schedule_tick(
        &mut self,
        now: Millis,
        history: &[Utterance],
        ids: &mut RequestIds,
        cadence_ms: Millis,
        cancel_after_ms: Millis,
    ) -> TickOutcome {
        let mut outcome = TickOutcome::default();
        let expired: Vec<u64> = self
            .in_flight
            .iter()
            .filter(|(_, &issued)| now.saturating_sub(issued) >= cancel_after_ms)
            .map(|(&id, _)| id)
            .collect();
        for id in &expired {
            self.in_flight.remove(id);
        }
        outcome.cancelled = expired;

        if now < self.next_due_ms {
            return outcome;
        }
        // keep the cadence grid anchored even if a tick arrived late
        let cadence = cadence_ms.max(1);
        let behind = (now - self.next_due_ms) / cadence;
        self.next_due_ms += (behind + 1) * cadence;

        if let Some(prompt) = build_suggestion_prompt(history) {
            let request_id = ids.next_id();
            self.in_flight.insert(request_id, now);
            let current = history.last().map(|u| u.text.clone()).unwrap_or_default();
            outcome.request = Some(BackendRequest {
                request_id,
                channel: Channel::Suggestion,
                prompt,
                issued_at_ms: now,
                inputs: PromptInputs::Suggestion {
                    current,
                    history: history.to_vec(),
                },
            });
        }
        outcome
    }

    /// Returns true when the response replaced the displayed words.
    pub fn apply_response(&mut self, resp: &BackendResponse) -> bool {
        let was_in_flight = self.in_flight.remove(&resp.request_id).is_some();
        if !was_in_flight || resp.request_id <= self.last_applied_request_id {
            return false;
        }
        match validate_suggestion(&resp.text) {
            Ok(words) => {
                self.words = words;
                self.last_applied_request_id = resp.request_id;
                true
            }
            Err(_) => false,
        }
    }

    pub fn on_failure(&mut self, request_id: u64) {
        self.in_flight.remove(&request_id);
    }
}
