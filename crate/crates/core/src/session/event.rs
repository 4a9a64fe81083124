use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{FeatureConfig, PanelId};
use crate::backend::{BackendFailure, BackendResponse};
use crate::ingest::Utterance;
use crate::settings::EngineSettings;
use crate::Millis;

/// One record of the event log: `{"seq":N,"at_ms":N,"kind":"...","payload":{...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub seq: u64,
    pub at_ms: Millis,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventKind {
    /// Must be the first event of every log.
    SessionOpened {
        topic: String,
        settings: EngineSettings,
    },
    SetConfig {
        config: FeatureConfig,
    },
    ConfirmFunctions {
        config: FeatureConfig,
    },
    UtteranceArrived(Utterance),
    GazeTrigger,
    GazeFocus {
        panel: PanelId,
    },
    GazeUnfocus,
    Tick,
    BackendArrived(BackendResponse),
    BackendFailed(BackendFailure),
    TriggerPoked,
    EndSession,
    ConfettiTap,
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::SessionOpened { .. } => "session_opened",
            EventKind::SetConfig { .. } => "set_config",
            EventKind::ConfirmFunctions { .. } => "confirm_functions",
            EventKind::UtteranceArrived(_) => "utterance_arrived",
            EventKind::GazeTrigger => "gaze_trigger",
            EventKind::GazeFocus { .. } => "gaze_focus",
            EventKind::GazeUnfocus => "gaze_unfocus",
            EventKind::Tick => "tick",
            EventKind::BackendArrived(_) => "backend_arrived",
            EventKind::BackendFailed(_) => "backend_failed",
            EventKind::TriggerPoked => "trigger_poked",
            EventKind::EndSession => "end_session",
            EventKind::ConfettiTap => "confetti_tap",
        }
    }
}

#[derive(Debug, Error)]
#[error("event log line {line}: {source}")]
pub struct LogParseError {
    pub line: usize,
    #[source]
    pub source: serde_json::Error,
}

pub fn event_to_line(event: &SessionEvent) -> String {
    let mut line = serde_json::to_string(event).expect("event serializes");
    line.push('\n');
    line
}

pub fn log_to_ndjson(events: &[SessionEvent]) -> String {
    events.iter().map(event_to_line).collect()
}

pub fn log_from_ndjson(text: &str) -> Result<Vec<SessionEvent>, LogParseError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(idx, l)| {
            serde_json::from_str(l).map_err(|source| LogParseError {
                line: idx + 1,
                source,
            })
        })
        .collect()
}
