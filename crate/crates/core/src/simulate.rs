//! Headless session driver: feeds a transcript through a session with the
//! mock backend, merging utterance arrivals, backend completions and
//! scheduler ticks on one logical clock.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backend::{BackendRequest, BackendResponse, MockBackend};
use crate::ingest::{arrivals, Pacer, ReplayItem, Transcript};
use crate::session::{Effect, EventKind, FeatureConfig, ServerEvent, SessionState};
use crate::settings::{AppConfig, EngineSettings, MockSettings};
use crate::Millis;

/// After the last utterance, keep the session open at most this long so the
/// summary and off-topic channels can drain.
pub const DRAIN_LIMIT_MS: Millis = 60_000;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReplayConfig {
    pub features: FeatureConfig,
    pub engine: EngineSettings,
    pub mock: MockSettings,
    pub seed: u64,
}

impl ReplayConfig {
    pub fn from_app(app: &AppConfig, seed: u64) -> Self {
        Self {
            features: app.features,
            engine: app.engine.clone(),
            mock: app.mock,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReplayOutcome {
    pub state: SessionState,
    /// Every request the session issued, in issue order.
    pub requests: Vec<BackendRequest>,
    /// Every protocol event, stamped with the session clock.
    pub emitted: Vec<(Millis, ServerEvent)>,
}

struct Driver {
    state: SessionState,
    mock: MockBackend,
    /// (due, request id) -> response
    scheduled: BTreeMap<(Millis, u64), BackendResponse>,
    due_of: BTreeMap<u64, Millis>,
    requests: Vec<BackendRequest>,
    emitted: Vec<(Millis, ServerEvent)>,
}

impl Driver {
    fn push(&mut self, at_ms: Millis, kind: EventKind) {
        let fx = self
            .state
            .push(at_ms, kind)
            .expect("driver only produces legal events");
        for effect in fx {
            match effect {
                Effect::Request(req) => {
                    let (text, latency) = self.mock.respond(&req);
                    let due = req.issued_at_ms + latency;
                    self.scheduled.insert((due, req.request_id), req.respond(text, latency));
                    self.due_of.insert(req.request_id, due);
                    self.requests.push(req);
                }
                Effect::Cancel(id) => {
                    if let Some(due) = self.due_of.remove(&id) {
                        self.scheduled.remove(&(due, id));
                    }
                }
                Effect::Emit(ev) => self.emitted.push((self.state.clock_ms, ev)),
            }
        }
    }

    fn next_response_due(&self) -> Option<Millis> {
        self.scheduled.keys().next().map(|&(due, _)| due)
    }

    fn deliver_next(&mut self) {
        let (&(due, id), _) = self.scheduled.iter().next().expect("a scheduled response");
        let resp = self.scheduled.remove(&(due, id)).expect("present");
        self.due_of.remove(&id);
        self.push(due, EventKind::BackendArrived(resp));
    }

    fn drained(&self) -> bool {
        let s = &self.state;
        s.self_summary.is_idle() && s.other_summary.is_idle() && s.offtopic.is_idle()
    }
}

/// Runs a whole session. The resulting event log depends only on the
/// transcript and `config`; `pacer` only affects wall-clock duration.
pub fn run_replay(transcript: &Transcript, config: &ReplayConfig, pacer: &Pacer) -> ReplayOutcome {
    let mut driver = Driver {
        state: SessionState::open(transcript.topic.clone(), config.engine.clone()),
        mock: MockBackend::new(config.seed, config.mock),
        scheduled: BTreeMap::new(),
        due_of: BTreeMap::new(),
        requests: Vec::new(),
        emitted: Vec::new(),
    };
    driver.push(0, EventKind::ConfirmFunctions { config: config.features });

    let tick_ms = config.engine.tick_ms.max(1);
    let mut next_tick: Millis = 0;
    let mut pending = arrivals(transcript).into_iter().peekable();
    let mut drain_deadline: Option<Millis> = None;

    loop {
        if let Some(deadline) = drain_deadline {
            if driver.drained() {
                break;
            }
            let next = driver.next_response_due().unwrap_or(Millis::MAX).min(next_tick);
            if next > deadline {
                break;
            }
        }

        let arrival_at = pending.peek().map(|(at, _)| *at);
        let response_at = driver.next_response_due();
        // ties: responses first, then arrivals, then ticks
        let earliest = [response_at, arrival_at, Some(next_tick)]
            .into_iter()
            .flatten()
            .min()
            .expect("the tick is always pending");

        pacer.wait_until(earliest);
        if response_at == Some(earliest) {
            driver.deliver_next();
        } else if arrival_at == Some(earliest) {
            let (at, item) = pending.next().expect("peeked");
            match item {
                ReplayItem::Utterance(utt) => driver.push(at, EventKind::UtteranceArrived(utt)),
                ReplayItem::End => drain_deadline = Some(at + DRAIN_LIMIT_MS),
            }
        } else {
            driver.push(next_tick, EventKind::Tick);
            next_tick += tick_ms;
        }
    }

    let end_at = driver.state.clock_ms;
    driver.push(end_at, EventKind::EndSession);
    ReplayOutcome {
        state: driver.state,
        requests: driver.requests,
        emitted: driver.emitted,
    }
}
