//! The session state machine. Every mutation goes through
//! [`SessionState::apply`], so folding a log of [`SessionEvent`]s from the
//! initial state reproduces the session exactly.

pub mod event;
mod panels;
pub mod view;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendFailure, BackendRequest, BackendResponse, Channel, RequestIds};
use crate::ingest::{Speaker, Utterance};
use crate::offtopic::OffTopicState;
use crate::settings::EngineSettings;
use crate::suggest::{validate_suggestion, SuggestionState};
use crate::summarize::{summary_word_count, validate_summary, SummaryState};
use crate::Millis;

pub use event::{EventKind, SessionEvent};
pub use panels::PanelLifecycle;
pub use view::{ChannelView, Effect, PanelDisplay, PanelView, ServerEvent, Snapshot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionPhase {
    FunctionSelection,
    Conversation,
    Feedback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub self_summary: bool,
    pub other_summary: bool,
    pub word_suggestions: bool,
    pub offtopic_detection: bool,
    pub popup_animation: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            self_summary: true,
            other_summary: true,
            word_suggestions: true,
            offtopic_detection: true,
            popup_animation: true,
        }
    }
}

impl FeatureConfig {
    pub fn enables(&self, panel: PanelId) -> bool {
        match panel {
            PanelId::SelfSummary => self.self_summary,
            PanelId::OtherSummary => self.other_summary,
            PanelId::Suggestions => self.word_suggestions,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PanelId {
    SelfSummary,
    OtherSummary,
    Suggestions,
}

impl PanelId {
    pub const ALL: [PanelId; 3] = [PanelId::SelfSummary, PanelId::OtherSummary, PanelId::Suggestions];
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SessionError {
    #[error("{event} is not allowed in phase {phase:?}")]
    IllegalPhase { phase: SessionPhase, event: &'static str },
    #[error("event out of order: expected seq {expected_seq} at or after {clock_ms} ms, got seq {seq} at {at_ms} ms")]
    OrderViolation {
        expected_seq: u64,
        seq: u64,
        clock_ms: Millis,
        at_ms: Millis,
    },
    #[error("panel {0:?} is not visible")]
    NotVisible(PanelId),
    #[error("session_opened must be the first event")]
    AlreadyOpened,
    #[error("invalid utterance: {0}")]
    InvalidUtterance(String),
    #[error("response for request {0} that was never issued")]
    UnknownRequest(u64),
}

impl SessionError {
    /// Stable snake_case code used on the wire.
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::IllegalPhase { .. } => "illegal_phase",
            SessionError::OrderViolation { .. } => "order_violation",
            SessionError::NotVisible(_) => "not_visible",
            SessionError::AlreadyOpened => "already_opened",
            SessionError::InvalidUtterance(_) => "invalid_utterance",
            SessionError::UnknownRequest(_) => "unknown_request",
        }
    }
}

/// One backend answer as seen by the session, for response statistics.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub request_id: u64,
    pub channel: Channel,
    pub latency_ms: Millis,
    /// Word count of the validated output; `None` when validation failed or
    /// the channel has no word output.
    pub words: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackReport {
    pub assist_count: u32,
    pub confetti_bursts: u32,
    pub duration_ms: Millis,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<Vec<Utterance>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub phase: SessionPhase,
    pub topic: String,
    pub settings: EngineSettings,
    pub config: FeatureConfig,
    pub clock_ms: Millis,
    pub last_seq: u64,
    pub started_at_ms: Option<Millis>,
    pub ended_at_ms: Option<Millis>,
    pub panels: BTreeMap<PanelId, PanelLifecycle>,
    pub trigger_active: bool,
    pub assist_count: u32,
    pub confetti_bursts: u32,
    pub last_utterance_id: u64,
    pub history: Vec<Utterance>,
    pub self_summary: SummaryState,
    pub other_summary: SummaryState,
    pub suggestion: SuggestionState,
    pub offtopic: OffTopicState,
    pub request_ids: RequestIds,
    pub responses: Vec<ResponseRecord>,
    pub event_log: Vec<SessionEvent>,
}

impl Default for SessionState {
    fn default() -> Self {
        let settings = EngineSettings::default();
        Self {
            phase: SessionPhase::FunctionSelection,
            topic: String::new(),
            config: FeatureConfig::default(),
            clock_ms: 0,
            last_seq: 0,
            started_at_ms: None,
            ended_at_ms: None,
            panels: PanelId::ALL.iter().map(|&p| (p, PanelLifecycle::Hidden)).collect(),
            trigger_active: false,
            assist_count: 0,
            confetti_bursts: 0,
            last_utterance_id: 0,
            history: Vec::new(),
            self_summary: SummaryState::new(Speaker::SelfUser),
            other_summary: SummaryState::new(Speaker::Partner),
            suggestion: SuggestionState::new(0),
            offtopic: OffTopicState::new(settings.offtopic_ramp_k),
            request_ids: RequestIds::default(),
            responses: Vec::new(),
            event_log: Vec::new(),
            settings,
        }
    }
}

impl SessionState {
    /// A fresh session whose log starts with `session_opened` at time 0.
    pub fn open(topic: impl Into<String>, settings: EngineSettings) -> Self {
        let mut state = Self::default();
        state
            .apply(SessionEvent {
                seq: 1,
                at_ms: 0,
                kind: EventKind::SessionOpened {
                    topic: topic.into(),
                    settings,
                },
            })
            .expect("opening a fresh session cannot fail");
        state
    }

    /// Rebuilds a session from its log.
    pub fn replay_log(events: &[SessionEvent]) -> Result<Self, (usize, SessionError)> {
        let mut state = Self::default();
        for (idx, event) in events.iter().enumerate() {
            state.apply(event.clone()).map_err(|e| (idx, e))?;
        }
        Ok(state)
    }

    pub fn next_seq(&self) -> u64 {
        self.last_seq + 1
    }

    /// Builds the next event at `at_ms` (clamped to the clock) and applies it.
    pub fn push(&mut self, at_ms: Millis, kind: EventKind) -> Result<Vec<Effect>, SessionError> {
        let event = SessionEvent {
            seq: self.next_seq(),
            at_ms: at_ms.max(self.clock_ms),
            kind,
        };
        self.apply(event)
    }

    /// Applies one event. On error the state is left untouched.
    pub fn apply(&mut self, event: SessionEvent) -> Result<Vec<Effect>, SessionError> {
        self.check(&event)?;
        self.clock_ms = event.at_ms;
        self.last_seq = event.seq;
        let mut fx = Vec::new();
        self.expire_panels(event.at_ms, &mut fx);
        self.handle(&event, &mut fx);
        self.event_log.push(event);
        Ok(fx)
    }

    fn illegal(&self, event: &EventKind) -> SessionError {
        SessionError::IllegalPhase {
            phase: self.phase,
            event: event.name(),
        }
    }

    fn check(&self, event: &SessionEvent) -> Result<(), SessionError> {
        if event.seq != self.next_seq() || event.at_ms < self.clock_ms {
            return Err(SessionError::OrderViolation {
                expected_seq: self.next_seq(),
                seq: event.seq,
                clock_ms: self.clock_ms,
                at_ms: event.at_ms,
            });
        }
        let phase = self.phase;
        match &event.kind {
            EventKind::SessionOpened { .. } if self.last_seq != 0 => Err(SessionError::AlreadyOpened),
            EventKind::SetConfig { .. } | EventKind::ConfirmFunctions { .. }
                if phase != SessionPhase::FunctionSelection =>
            {
                Err(self.illegal(&event.kind))
            }
            EventKind::UtteranceArrived(_) if phase != SessionPhase::Conversation => Err(self.illegal(&event.kind)),
            EventKind::UtteranceArrived(utt) => {
                if utt.id <= self.last_utterance_id {
                    Err(SessionError::InvalidUtterance(format!(
                        "id {} is not greater than {}",
                        utt.id, self.last_utterance_id
                    )))
                } else if utt.text.trim().is_empty() {
                    Err(SessionError::InvalidUtterance("empty text".into()))
                } else if utt.t_end_ms < utt.t_start_ms {
                    Err(SessionError::InvalidUtterance("t_end_ms before t_start_ms".into()))
                } else {
                    Ok(())
                }
            }
            EventKind::GazeFocus { panel } => {
                let shown = self
                    .panels
                    .get(panel)
                    .is_some_and(|l| l.is_shown_at(event.at_ms, self.settings.panel_fade_ms));
                if shown {
                    Ok(())
                } else {
                    Err(SessionError::NotVisible(*panel))
                }
            }
            EventKind::BackendArrived(BackendResponse { request_id, .. })
            | EventKind::BackendFailed(BackendFailure { request_id, .. })
                if !self.request_ids.was_issued(*request_id) =>
            {
                Err(SessionError::UnknownRequest(*request_id))
            }
            EventKind::TriggerPoked | EventKind::EndSession if phase != SessionPhase::Conversation => {
                Err(self.illegal(&event.kind))
            }
            EventKind::ConfettiTap if phase != SessionPhase::Feedback => Err(self.illegal(&event.kind)),
            _ => Ok(()),
        }
    }

    fn handle(&mut self, event: &SessionEvent, fx: &mut Vec<Effect>) {
        let now = event.at_ms;
        match &event.kind {
            EventKind::SessionOpened { topic, settings } => {
                self.topic = topic.clone();
                self.settings = settings.clone();
                self.offtopic = OffTopicState::new(settings.offtopic_ramp_k);
            }
            EventKind::SetConfig { config } => {
                self.config = *config;
                fx.push(Effect::Emit(ServerEvent::ConfigUpdated { config: *config }));
            }
            EventKind::ConfirmFunctions { config } => self.confirm(*config, now, fx),
            EventKind::UtteranceArrived(utt) => self.on_utterance(utt, now, fx),
            EventKind::GazeTrigger => self.trigger_gaze(now, fx),
            EventKind::GazeFocus { panel } => self.focus_panel(*panel, fx),
            EventKind::GazeUnfocus => self.unfocus(fx),
            EventKind::Tick => self.on_tick(now, fx),
            EventKind::BackendArrived(resp) => self.on_response(resp, now, fx),
            EventKind::BackendFailed(failure) => self.on_failure(failure, now, fx),
            EventKind::TriggerPoked | EventKind::EndSession => self.end(now, fx),
            EventKind::ConfettiTap => {
                self.confetti_bursts += 1;
                fx.push(self.feedback_event());
            }
        }
    }

    fn confirm(&mut self, config: FeatureConfig, now: Millis, fx: &mut Vec<Effect>) {
        self.config = config;
        self.phase = SessionPhase::Conversation;
        self.started_at_ms = Some(now);
        self.hide_all_panels();
        self.assist_count = 0;
        self.suggestion = SuggestionState::new(now);
        fx.push(Effect::Emit(ServerEvent::PhaseChanged {
            phase: self.phase,
            config,
        }));
        fx.push(self.panels_event());
        fx.push(self.trigger_state_event());
    }

    fn on_utterance(&mut self, utt: &Utterance, now: Millis, fx: &mut Vec<Effect>) {
        self.last_utterance_id = utt.id;
        self.history.push(utt.clone());
        let ids = &mut self.request_ids;
        let mut requests: Vec<BackendRequest> = Vec::new();
        if self.config.self_summary {
            requests.extend(self.self_summary.on_utterance(utt, ids, now));
        }
        if self.config.other_summary {
            requests.extend(self.other_summary.on_utterance(utt, ids, now));
        }
        if self.config.offtopic_detection {
            requests.extend(self.offtopic.on_utterance(utt, &self.history, &self.topic, ids, now));
        }
        fx.extend(requests.into_iter().map(Effect::Request));
    }

    fn on_tick(&mut self, now: Millis, fx: &mut Vec<Effect>) {
        if self.phase != SessionPhase::Conversation || !self.config.word_suggestions {
            return;
        }
        let outcome = self.suggestion.schedule_tick(
            now,
            &self.history,
            &mut self.request_ids,
            self.settings.suggestion_cadence_ms,
            self.settings.suggestion_cancel_after_ms,
        );
        fx.extend(outcome.cancelled.into_iter().map(Effect::Cancel));
        fx.extend(outcome.request.map(Effect::Request));
    }

    fn summary_channel(&mut self, channel: Channel) -> Option<&mut SummaryState> {
        match channel {
            Channel::SelfSummary => Some(&mut self.self_summary),
            Channel::OtherSummary => Some(&mut self.other_summary),
            _ => None,
        }
    }

    fn on_response(&mut self, resp: &BackendResponse, now: Millis, fx: &mut Vec<Effect>) {
        if self.phase != SessionPhase::Conversation {
            return;
        }
        let words = match resp.channel {
            Channel::SelfSummary | Channel::OtherSummary => {
                validate_summary(&resp.text).ok().map(|t| summary_word_count(&t))
            }
            Channel::Suggestion => validate_suggestion(&resp.text).ok().map(|w| w.len()),
            Channel::OffTopic => None,
        };
        self.responses.push(ResponseRecord {
            request_id: resp.request_id,
            channel: resp.channel,
            latency_ms: resp.latency_ms,
            words,
        });

        match resp.channel {
            Channel::SelfSummary | Channel::OtherSummary => {
                let history = std::mem::take(&mut self.history);
                let mut ids = self.request_ids;
                let ch = self.summary_channel(resp.channel).expect("summary channel");
                let result = ch.apply_response(resp, &history, &mut ids, now);
                let update = ServerEvent::SummaryUpdate {
                    channel: ch.channel,
                    keywords: ch.keywords.clone(),
                    version: ch.version,
                    request_id: resp.request_id,
                };
                self.history = history;
                self.request_ids = ids;
                // a stale response is discarded without touching the channel
                if let Ok(outcome) = result {
                    if outcome.applied {
                        fx.push(Effect::Emit(update));
                    }
                    fx.extend(outcome.request.map(Effect::Request));
                }
            }
            Channel::Suggestion => {
                if self.suggestion.apply_response(resp) {
                    fx.push(Effect::Emit(ServerEvent::SuggestionUpdate {
                        words: self.suggestion.words.clone(),
                        request_id: resp.request_id,
                    }));
                }
            }
            Channel::OffTopic => {
                if self.offtopic.apply_response(resp).is_some() {
                    fx.push(self.trigger_state_event());
                }
            }
        }
    }

    fn on_failure(&mut self, failure: &BackendFailure, now: Millis, fx: &mut Vec<Effect>) {
        if self.phase != SessionPhase::Conversation {
            return;
        }
        match failure.channel {
            Channel::SelfSummary | Channel::OtherSummary => {
                let history = std::mem::take(&mut self.history);
                let mut ids = self.request_ids;
                let ch = self.summary_channel(failure.channel).expect("summary channel");
                if let Ok(next) = ch.on_failure(failure.request_id, &history, &mut ids, now) {
                    fx.extend(next.map(Effect::Request));
                }
                self.history = history;
                self.request_ids = ids;
            }
            Channel::Suggestion => self.suggestion.on_failure(failure.request_id),
            Channel::OffTopic => self.offtopic.on_failure(failure.request_id),
        }
    }

    /// Request ids that may still produce a response.
    pub fn in_flight(&self) -> Vec<u64> {
        let mut ids: Vec<u64> = self
            .self_summary
            .pending
            .iter()
            .chain(self.other_summary.pending.iter())
            .map(|p| p.request_id)
            .chain(self.suggestion.in_flight.keys().copied())
            .chain(self.offtopic.pending.keys().copied())
            .collect();
        ids.sort_unstable();
        ids
    }

    fn end(&mut self, now: Millis, fx: &mut Vec<Effect>) {
        fx.extend(self.in_flight().into_iter().map(Effect::Cancel));
        for ch in [&mut self.self_summary, &mut self.other_summary] {
            ch.pending = None;
            ch.queue.clear();
        }
        self.suggestion.in_flight.clear();
        self.offtopic.pending.clear();
        if self.hide_all_panels() {
            fx.push(self.panels_event());
        }
        self.phase = SessionPhase::Feedback;
        self.ended_at_ms = Some(now);
        if !self.settings.retain_transcript {
            self.history.clear();
        }
        fx.push(Effect::Emit(ServerEvent::PhaseChanged {
            phase: self.phase,
            config: self.config,
        }));
        fx.push(self.feedback_event());
    }

    fn trigger_state_event(&self) -> Effect {
        Effect::Emit(ServerEvent::TriggerState {
            level: self.offtopic.level,
            color: self.offtopic.color(),
        })
    }

    fn feedback_event(&self) -> Effect {
        Effect::Emit(ServerEvent::Feedback {
            assist_count: self.assist_count,
            confetti_bursts: self.confetti_bursts,
            duration_ms: self.duration_ms(),
        })
    }

    pub fn duration_ms(&self) -> Millis {
        match (self.started_at_ms, self.ended_at_ms) {
            (Some(start), Some(end)) => end - start,
            (Some(start), None) => self.clock_ms - start,
            _ => 0,
        }
    }

    /// `None` until the session has reached the feedback phase.
    pub fn feedback_report(&self) -> Option<FeedbackReport> {
        (self.phase == SessionPhase::Feedback).then(|| FeedbackReport {
            assist_count: self.assist_count,
            confetti_bursts: self.confetti_bursts,
            duration_ms: self.duration_ms(),
            transcript: self.settings.retain_transcript.then(|| self.history.clone()),
        })
    }

    pub fn snapshot(&self) -> Snapshot {
        let channel_view = |s: &SummaryState| ChannelView {
            keywords: s.keywords.clone(),
            version: s.version,
        };
        Snapshot {
            phase: self.phase,
            config: self.config,
            trigger_active: self.trigger_active,
            panels: self.panel_views(),
            self_summary: channel_view(&self.self_summary),
            other_summary: channel_view(&self.other_summary),
            suggestion: self.suggestion.words.clone(),
            trigger_level: self.offtopic.level,
            trigger_color: self.offtopic.color(),
            assist_count: self.assist_count,
            confetti_bursts: self.confetti_bursts,
        }
    }
}
