//! Self- and other-summarization channels.
//!
//! Each channel keeps one request in flight. Every request embeds the keywords
//! current at issue time, so a burst of utterances is summarized as a chain:
//! the answer for one utterance becomes the "previous summary" of the next.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendRequest, BackendResponse, Channel, PromptInputs, RequestIds};
use crate::ingest::{Speaker, Utterance};
use crate::prompts::{summary_prompt, SUMMARY_RETRY_SUFFIX};
use crate::text::word_count;
use crate::Millis;

pub const MIN_TERMS: usize = 4;
pub const MAX_TERMS: usize = 12;
pub const MAX_WORDS_PER_TERM: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SummaryValidationError {
    #[error("only {} summary terms", terms.len())]
    TooFew { terms: Vec<String> },
    #[error("{} summary terms, at most {MAX_TERMS} allowed", terms.len())]
    TooMany { terms: Vec<String> },
    #[error("summary term {term:?} is longer than {MAX_WORDS_PER_TERM} words")]
    TermTooLong { term: String, terms: Vec<String> },
}

impl SummaryValidationError {
    pub fn terms(&self) -> &[String] {
        match self {
            Self::TooFew { terms } | Self::TooMany { terms } | Self::TermTooLong { terms, .. } => terms,
        }
    }
}

fn split_terms(raw: &str) -> Vec<String> {
    raw.split([',', '\n'])
        .map(|t| {
            t.trim()
                .trim_start_matches(['-', '*', '\u{2022}'])
                .trim()
                .to_owned()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

pub fn validate_summary(raw: &str) -> Result<Vec<String>, SummaryValidationError> {
    let terms = split_terms(raw);
    if terms.len() < MIN_TERMS {
        return Err(SummaryValidationError::TooFew { terms });
    }
    if terms.len() > MAX_TERMS {
        return Err(SummaryValidationError::TooMany { terms });
    }
    if let Some(term) = terms.iter().find(|t| word_count(t) > MAX_WORDS_PER_TERM) {
        return Err(SummaryValidationError::TermTooLong {
            term: term.clone(),
            terms,
        });
    }
    Ok(terms)
}

/// Forces terms into shape after a failed retry: long terms are cut to four
/// words, the list to twelve, and short lists are padded by splitting the
/// longest multi-word terms. Returns an empty list only for empty input.
pub fn clamp_terms(terms: &[String]) -> Vec<String> {
    let mut out: Vec<String> = terms
        .iter()
        .map(|t| t.split_whitespace().take(MAX_WORDS_PER_TERM).collect::<Vec<_>>().join(" "))
        .filter(|t| !t.is_empty())
        .collect();
    out.truncate(MAX_TERMS);
    while out.len() < MIN_TERMS {
        let Some((idx, _)) = out
            .iter()
            .enumerate()
            .filter(|(_, t)| word_count(t) > 1)
            .max_by_key(|(idx, t)| (word_count(t), std::cmp::Reverse(*idx)))
        else {
            break;
        };
        let words: Vec<String> = out[idx].split_whitespace().map(str::to_owned).collect();
        out.splice(idx..=idx, words);
    }
    out.truncate(MAX_TERMS);
    out
}

pub fn summary_word_count(terms: &[String]) -> usize {
    terms.iter().map(|t| word_count(t)).sum()
}

pub fn build_summary_prompt(recent: &Utterance, previous: &[String]) -> String {
    summary_prompt(&recent.text, previous)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingSummary {
    pub request_id: u64,
    pub utterance_id: u64,
    pub base_version: u64,
    pub retried: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryState {
    pub channel: Speaker,
    pub keywords: Vec<String>,
    pub version: u64,
    pub pending: Option<PendingSummary>,
    pub queue: VecDeque<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("response {got} does not match the in-flight summary request {expected:?}")]
pub struct StaleResponse {
    pub expected: Option<u64>,
    pub got: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SummaryOutcome {
    /// Set when the keywords changed.
    pub applied: bool,
    pub clamped: bool,
    pub request: Option<BackendRequest>,
}

impl SummaryState {
    pub fn new(channel: Speaker) -> Self {
        Self {
            channel,
            keywords: Vec::new(),
            version: 0,
            pending: None,
            queue: VecDeque::new(),
        }
    }

    pub fn backend_channel(&self) -> Channel {
        match self.channel {
            Speaker::SelfUser => Channel::SelfSummary,
            Speaker::Partner => Channel::OtherSummary,
        }
    }

    pub fn is_idle(&self) -> bool {
        self.pending.is_none() && self.queue.is_empty()
    }

    fn issue(&mut self, utt: &Utterance, retried: bool, ids: &mut RequestIds, now: Millis) -> BackendRequest {
        let request_id = ids.next_id();
        let mut prompt = build_summary_prompt(utt, &self.keywords);
        if retried {
            prompt.push_str(SUMMARY_RETRY_SUFFIX);
        }
        self.pending = Some(PendingSummary {
            request_id,
            utterance_id: utt.id,
            base_version: self.version,
            retried,
        });
        BackendRequest {
            request_id,
            channel: self.backend_channel(),
            prompt,
            issued_at_ms: now,
            inputs: PromptInputs::Summary {
                utterance_id: utt.id,
                recent: utt.text.clone(),
                previous: self.keywords.clone(),
                base_version: self.version,
                retry: retried,
            },
        }
    }

    pub fn on_utterance(&mut self, utt: &Utterance, ids: &mut RequestIds, now: Millis) -> Option<BackendRequest> {
        if utt.speaker != self.channel {
            return None;
        }
        if self.pending.is_some() {
            self.queue.push_back(utt.id);
            return None;
        }
        Some(self.issue(utt, false, ids, now))
    }

    fn check_pending(&self, request_id: u64) -> Result<PendingSummary, StaleResponse> {
        match &self.pending {
            Some(p) if p.request_id == request_id => Ok(p.clone()),
            other => Err(StaleResponse {
                expected: other.as_ref().map(|p| p.request_id),
                got: request_id,
            }),
        }
    }

    /// Issues the next queued utterance, if any. `history` is searched by id.
    fn advance(&mut self, history: &[Utterance], ids: &mut RequestIds, now: Millis) -> Option<BackendRequest> {
        self.pending = None;
        while let Some(next) = self.queue.pop_front() {
            if let Some(utt) = find_utterance(history, next) {
                let utt = utt.clone();
                return Some(self.issue(&utt, false, ids, now));
            }
        }
        None
    }

    pub fn apply_response(
        &mut self,
        resp: &BackendResponse,
        history: &[Utterance],
        ids: &mut RequestIds,
        now: Millis,
    ) -> Result<SummaryOutcome, StaleResponse> {
        let pending = self.check_pending(resp.request_id)?;
        let mut outcome = SummaryOutcome::default();
        let terms = match validate_summary(&resp.text) {
            Ok(terms) => terms,
            Err(_) if !pending.retried => {
                if let Some(utt) = find_utterance(history, pending.utterance_id).cloned() {
                    outcome.request = Some(self.issue(&utt, true, ids, now));
                    return Ok(outcome);
                }
                Vec::new()
            }
            Err(err) => {
                outcome.clamped = true;
                clamp_terms(err.terms())
            }
        };
        if !terms.is_empty() {
            self.keywords = terms;
            self.version += 1;
            outcome.applied = true;
        }
        outcome.request = self.advance(history, ids, now);
        Ok(outcome)
    }

    /// A failed request is treated like a discarded response: no retry.
    pub fn on_failure(
        &mut self,
        request_id: u64,
        history: &[Utterance],
        ids: &mut RequestIds,
        now: Millis,
    ) -> Result<Option<BackendRequest>, StaleResponse> {
        self.check_pending(request_id)?;
        Ok(self.advance(history, ids, now))
    }
}

pub(crate) fn find_utterance(history: &[Utterance], id: u64) -> Option<&Utterance> {
    history
        .binary_search_by_key(&id, |u| u.id)
        .ok()
        .map(|idx| &history[idx])
}
