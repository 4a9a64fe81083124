//! Rule-based stand-in for the language model.
//!
//! Every answer is a pure function of the request inputs; only the synthetic
//! latency draws on the seed, through a generator keyed by request id so
//! completion order never changes what is sampled.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{BackendRequest, Channel, PromptInputs};
use crate::ingest::{Speaker, Utterance};
use crate::settings::MockSettings;
use crate::text::{content_token_set, content_tokens, tokens};
use crate::Millis;

const SUMMARY_TERMS_FROM_RECENT: usize = 8;
const SUMMARY_MIN_TERMS: usize = 4;
const SUMMARY_MAX_TERMS: usize = 12;
const SUMMARY_FILLERS: [&str; 4] = ["Conversation", "Opening", "Small Talk", "Greeting"];
const SUGGESTION_MAX_TOKENS: usize = 4;
pub const SUGGESTION_FALLBACK: &str = "tell me more";
const OFFTOPIC_CONTEXT_UTTERANCES: usize = 3;
const OFFTOPIC_MIN_OVERLAP: f64 = 0.1;

fn push_unique(terms: &mut Vec<String>, seen: &mut BTreeSet<String>, term: &str) {
    if seen.insert(term.to_lowercase()) {
        terms.push(term.to_owned());
    }
}

/// Most frequent content tokens of `recent` (ties by first occurrence),
/// followed by the previous keywords, deduplicated and clipped to 4..=12.
pub fn mock_summarize(recent: &str, previous: &[String]) -> String {
    let mut counts: BTreeMap<String, (usize, usize, String)> = BTreeMap::new();
    for (idx, tok) in content_tokens(recent).into_iter().enumerate() {
        let entry = counts.entry(tok.to_lowercase()).or_insert((0, idx, tok));
        entry.0 += 1;
    }
    let mut ranked: Vec<_> = counts.into_values().collect();
    ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));

    let mut terms = Vec::new();
    let mut seen = BTreeSet::new();
    for (_, _, tok) in ranked.iter().take(SUMMARY_TERMS_FROM_RECENT) {
        push_unique(&mut terms, &mut seen, tok);
    }
    for prev in previous {
        push_unique(&mut terms, &mut seen, prev);
    }
    terms.truncate(SUMMARY_MAX_TERMS);
    if terms.len() < SUMMARY_MIN_TERMS {
        for tok in tokens(recent) {
            if terms.len() >= SUMMARY_MIN_TERMS {
                break;
            }
            push_unique(&mut terms, &mut seen, &tok);
        }
        for filler in SUMMARY_FILLERS {
            if terms.len() >= SUMMARY_MIN_TERMS {
                break;
            }
            push_unique(&mut terms, &mut seen, filler);
        }
    }
    terms.join(", ")
}

/// First content tokens of the latest partner utterance that the user has
/// not said yet.
pub fn mock_suggest(history: &[Utterance]) -> String {
    let Some(last_partner) = history.iter().rev().find(|u| u.speaker == Speaker::Partner) else {
        return SUGGESTION_FALLBACK.to_owned();
    };
    let spoken: BTreeSet<String> = history
        .iter()
        .filter(|u| u.speaker == Speaker::SelfUser)
        .flat_map(|u| tokens(&u.text))
        .map(|t| t.to_lowercase())
        .collect();
    let mut picked = Vec::new();
    let mut seen = BTreeSet::new();
    for tok in content_tokens(&last_partner.text) {
        let lower = tok.to_lowercase();
        if spoken.contains(&lower) || !seen.insert(lower) {
            continue;
        }
        picked.push(tok);
        if picked.len() == SUGGESTION_MAX_TOKENS {
            break;
        }
    }
    if picked.is_empty() {
        SUGGESTION_FALLBACK.to_owned()
    } else {
        picked.join(" ")
    }
}

pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// "No" when the current utterance overlaps the topic or the last three prior
/// utterances enough, "Yes" otherwise. `prior` excludes the current utterance.
pub fn mock_offtopic(prior: &[Utterance], current: &str, topic: &str) -> &'static str {
    let current = content_token_set(current);
    if current.is_empty() {
        return "No";
    }
    let mut reference = content_token_set(topic);
    let skip = prior.len().saturating_sub(OFFTOPIC_CONTEXT_UTTERANCES);
    for u in &prior[skip..] {
        reference.extend(content_token_set(&u.text));
    }
    if jaccard(&current, &reference) >= OFFTOPIC_MIN_OVERLAP {
        "No"
    } else {
        "Yes"
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MockBackend {
    pub seed: u64,
    pub settings: MockSettings,
}

impl MockBackend {
    pub fn new(seed: u64, settings: MockSettings) -> Self {
        Self { seed, settings }
    }

    pub fn answer(&self, request: &BackendRequest) -> String {
        match &request.inputs {
            PromptInputs::Summary {
                recent, previous, ..
            } => mock_summarize(recent, previous),
            PromptInputs::Suggestion { history, .. } => mock_suggest(history),
            PromptInputs::OffTopic {
                utterance_id,
                current,
                history,
                topic,
            } => {
                let prior: Vec<Utterance> = history
                    .iter()
                    .filter(|u| u.id != *utterance_id)
                    .cloned()
                    .collect();
                mock_offtopic(&prior, current, topic).to_owned()
            }
        }
    }

    pub fn latency_ms(&self, request: &BackendRequest) -> Millis {
        let (mean, sd) = match request.channel {
            Channel::SelfSummary | Channel::OtherSummary => {
                (self.settings.latency_ms.summarize, self.settings.latency_sd_ms.summarize)
            }
            Channel::Suggestion => (self.settings.latency_ms.suggest, self.settings.latency_sd_ms.suggest),
            Channel::OffTopic => (self.settings.latency_ms.offtopic, self.settings.latency_sd_ms.offtopic),
        };
        if sd == 0 {
            return mean;
        }
        let key = self.seed ^ request.request_id.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        let normal = Normal::new(mean as f64, sd as f64).expect("finite latency parameters");
        normal.sample(&mut rng).round().max(0.0) as Millis
    }

    pub fn respond(&self, request: &BackendRequest) -> (String, Millis) {
        (self.answer(request), self.latency_ms(request))
    }
}
