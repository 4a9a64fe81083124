#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use parley_core::backend::{BackendErrorKind, BackendRequest, Channel, PromptInputs};
use parley_core::ingest::{Speaker, Utterance};
use parley_core::session::{
    Effect, EventKind, FeatureConfig, PanelDisplay, PanelId, ServerEvent, SessionPhase, SessionState, Snapshot,
};
use parley_core::settings::EngineSettings;
use parley_core::Millis;
use proptest::prelude::*;

pub const VOCAB: &[&str] = &[
    "park", "river", "market", "cereal", "taxes", "bench", "quiet", "sunset", "printer", "the", "and", "ducks",
];

#[derive(Debug, Clone)]
pub enum Op {
    Advance(Millis),
    Utter { partner: bool, words: Vec<usize> },
    Tick,
    /// Deliver the outstanding request at `pick % len` with answer variant `variant`.
    Deliver { pick: usize, variant: u8 },
    Fail { pick: usize },
    Trigger,
    Focus(usize),
    Unfocus,
}

pub fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        3 => prop_oneof![0u64..7000, Just(5000), Just(4999), Just(2500), Just(1)].prop_map(Op::Advance),
        3 => (any::<bool>(), prop::collection::vec(0..VOCAB.len(), 1..8))
            .prop_map(|(partner, words)| Op::Utter { partner, words }),
        3 => Just(Op::Tick),
        4 => (any::<usize>(), any::<u8>()).prop_map(|(pick, variant)| Op::Deliver { pick, variant }),
        1 => any::<usize>().prop_map(|pick| Op::Fail { pick }),
        3 => Just(Op::Trigger),
        2 => (0usize..3).prop_map(Op::Focus),
        1 => Just(Op::Unfocus),
    ]
}

pub fn config() -> impl Strategy<Value = FeatureConfig> {
    prop::array::uniform5(any::<bool>()).prop_map(|f| FeatureConfig {
        self_summary: f[0],
        other_summary: f[1],
        word_suggestions: f[2],
        offtopic_detection: f[3],
        popup_animation: f[4],
    })
}

fn answer(req: &BackendRequest, variant: u8) -> String {
    let v = variant as usize;
    match req.channel {
        Channel::SelfSummary | Channel::OtherSummary => match v % 4 {
            0 => "Too, Few".into(),
            1 => format!("Alpha {v}, Beta, Gamma, Delta"),
            2 => "one two three four five six, b, c, d".into(),
            _ => (0..(4 + v % 9)).map(|i| format!("Term{i}")).collect::<Vec<_>>().join(", "),
        },
        Channel::Suggestion => match v % 4 {
            0 => format!("maybe {v}"),
            1 => "This is a whole sentence.".into(),
            2 => "a b c d e f g".into(),
            _ => "tell me more".into(),
        },
        Channel::OffTopic => if v % 2 == 0 { "Yes" } else { "No" }.into(),
    }
}

/// Everything observed while driving one chaotic session.
#[derive(Debug, Default)]
pub struct Trace {
    pub violations: Vec<String>,
    pub suggestion_checks: usize,
    pub state: Option<SessionState>,
    pub requests: Vec<BackendRequest>,
    pub emitted: Vec<ServerEvent>,
}

struct Harness {
    s: SessionState,
    trace: Trace,
    outstanding: Vec<BackendRequest>,
    cancelled: BTreeSet<u64>,
    fold: Snapshot,
}

impl Harness {
    fn step(&mut self, kind: EventKind, now: Millis) -> bool {
        let Ok(fx) = self.s.push(now, kind) else {
            return false;
        };
        for e in fx {
            match e {
                Effect::Request(r) => {
                    self.trace.requests.push(r.clone());
                    self.outstanding.push(r);
                }
                Effect::Cancel(id) => {
                    self.cancelled.insert(id);
                }
                Effect::Emit(ev) => {
                    self.fold.apply(&ev);
                    self.trace.emitted.push(ev);
                }
            }
        }
        true
    }
}

/// Drives a session through `ops` and checks independent models after each
/// step. Responses are delivered in arbitrary order, including for requests
/// the engine already cancelled.
pub fn run_chaos(config: FeatureConfig, ops: &[Op]) -> Trace {
    let settings = EngineSettings::default();
    let fade = settings.panel_fade_ms;
    let mut h = Harness {
        s: SessionState::open("What is your favorite place in the city you currently live in?", settings),
        trace: Trace::default(),
        outstanding: Vec::new(),
        cancelled: BTreeSet::new(),
        fold: Snapshot::default(),
    };
    let mut closed: BTreeSet<u64> = BTreeSet::new();
    // model of the displayed suggestion: highest accepted id and its words
    let mut best_suggestion: Option<(u64, Vec<String>)> = None;
    let mut opened_at: Option<Millis> = None;
    let mut opens = 0u32;
    let mut versions: BTreeMap<Speaker, BTreeMap<u64, Vec<String>>> = BTreeMap::new();
    let mut last_version: BTreeMap<Speaker, u64> = BTreeMap::new();
    let mut now: Millis = 0;
    let mut next_id = 1u64;

    h.step(EventKind::ConfirmFunctions { config }, 0);
    for op in ops {
        match op {
            Op::Advance(dt) => now += dt,
            Op::Utter { partner, words } => {
                let text = words.iter().map(|&i| VOCAB[i]).collect::<Vec<_>>().join(" ");
                let utt = Utterance {
                    id: next_id,
                    t_start_ms: now.saturating_sub(300 * words.len() as u64),
                    t_end_ms: now,
                    speaker: if *partner { Speaker::Partner } else { Speaker::SelfUser },
                    text,
                };
                next_id += 1;
                h.step(EventKind::UtteranceArrived(utt), now);
            }
            Op::Tick => {
                h.step(EventKind::Tick, now);
            }
            Op::Deliver { pick, variant } => {
                if h.outstanding.is_empty() {
                    continue;
                }
                let req = h.outstanding.remove(pick % h.outstanding.len());
                let text = answer(&req, *variant);
                let was_open = !h.cancelled.contains(&req.request_id) && !closed.contains(&req.request_id);
                closed.insert(req.request_id);
                let latency = now - req.issued_at_ms;
                h.step(EventKind::BackendArrived(req.respond(text.clone(), latency)), now);
                if req.channel == Channel::Suggestion && was_open && h.s.phase == SessionPhase::Conversation {
                    if let Ok(words) = parley_core::suggest::validate_suggestion(&text) {
                        if best_suggestion.as_ref().is_none_or(|(id, _)| req.request_id > *id) {
                            best_suggestion = Some((req.request_id, words));
                        }
                    }
                }
            }
            Op::Fail { pick } => {
                if h.outstanding.is_empty() {
                    continue;
                }
                let req = h.outstanding.remove(pick % h.outstanding.len());
                closed.insert(req.request_id);
                let latency = now - req.issued_at_ms;
                h.step(EventKind::BackendFailed(req.fail(BackendErrorKind::Transport, latency)), now);
            }
            Op::Trigger => {
                let before = h.s.assist_count;
                let shown_before = h.s.panels.values().any(|l| l.is_shown_at(now, fade));
                h.step(EventKind::GazeTrigger, now);
                if h.s.assist_count > before {
                    opens += 1;
                    opened_at = Some(now);
                    if shown_before {
                        h.trace.violations.push(format!("trigger at {now} opened while panels were shown"));
                    }
                }
            }
            Op::Focus(i) => {
                h.step(EventKind::GazeFocus { panel: PanelId::ALL[*i] }, now);
            }
            Op::Unfocus => {
                h.step(EventKind::GazeUnfocus, now);
            }
        }

        let s = &h.s;
        let trace = &mut h.trace;
        // panels: shown only when eligible, never past the fade, and only
        // since the latest opening trigger
        let snap = s.snapshot();
        for view in &snap.panels {
            if view.state == PanelDisplay::Hidden {
                continue;
            }
            if !config.enables(view.panel) {
                trace.violations.push(format!("ineligible {:?} shown at {now}", view.panel));
            }
            let since = view.since_ms.unwrap_or(Millis::MAX);
            if s.clock_ms.saturating_sub(since) >= fade {
                trace.violations.push(format!("{:?} visible for {} ms", view.panel, s.clock_ms - since));
            }
            if Some(since) != opened_at {
                trace.violations.push(format!("{:?} shown since {since}, opened at {opened_at:?}", view.panel));
            }
        }
        if s.assist_count != opens {
            trace.violations.push(format!("assist_count {} but {opens} openings", s.assist_count));
        }

        // suggestion: last write wins by request id
        let expected = best_suggestion.as_ref().map(|(_, w)| w.clone()).unwrap_or_default();
        trace.suggestion_checks += 1;
        if snap.suggestion != expected {
            trace.violations.push(format!("suggestion {:?}, model {:?}", snap.suggestion, expected));
        }

        for (speaker, view) in [(Speaker::SelfUser, &snap.self_summary), (Speaker::Partner, &snap.other_summary)] {
            let last = last_version.entry(speaker).or_default();
            if view.version < *last {
                trace.violations.push(format!("{speaker:?} summary regressed {} -> {}", *last, view.version));
            }
            *last = view.version;
            versions.entry(speaker).or_default().insert(view.version, view.keywords.clone());
        }

        if !(0.0..=1.0).contains(&snap.trigger_level) {
            trace.violations.push(format!("level {}", snap.trigger_level));
        }
        if h.fold != snap {
            trace.violations.push(format!("client fold diverged at {now}"));
        }
    }

    // chaining: the request behind version v was built on version v-1
    let mut chain_violations = Vec::new();
    let by_id: BTreeMap<u64, &BackendRequest> = h.trace.requests.iter().map(|r| (r.request_id, r)).collect();
    for ev in &h.trace.emitted {
        if let ServerEvent::SummaryUpdate {
            channel,
            version,
            request_id,
            ..
        } = ev
        {
            let Some(PromptInputs::Summary { previous, .. }) = by_id.get(request_id).map(|r| &r.inputs) else {
                chain_violations.push(format!("update from unknown request {request_id}"));
                continue;
            };
            let prior = versions.get(channel).and_then(|v| v.get(&(version - 1)));
            if prior != Some(previous) {
                chain_violations.push(format!("version {version} built on {previous:?}, expected {prior:?}"));
            }
        }
    }
    h.trace.violations.extend(chain_violations);

    h.step(EventKind::EndSession, now);
    let mut trace = h.trace;
    trace.state = Some(h.s);
    trace
}
