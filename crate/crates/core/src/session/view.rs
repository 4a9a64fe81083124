//! Client-visible state: the server→client event vocabulary and the
//! snapshot a client rebuilds by folding those events.

use serde::{Deserialize, Serialize};

use super::{FeatureConfig, PanelId, SessionPhase};
use crate::backend::BackendRequest;
use crate::ingest::Speaker;
use crate::Millis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PanelDisplay {
    Hidden,
    Visible,
    Focused,
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelView {
    pub panel: PanelId,
    pub eligible: bool,
    pub state: PanelDisplay,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub since_ms: Option<Millis>,
    pub opacity: f64,
    #[serde(default, skip_serializing_if = "is_false")]
    pub dimmed: bool,
    #[serde(default, skip_serializing_if = "is_false")]
    pub popup: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerEvent {
    ConfigUpdated {
        config: FeatureConfig,
    },
    PhaseChanged {
        phase: SessionPhase,
        config: FeatureConfig,
    },
    PanelsState {
        trigger_active: bool,
        assist_count: u32,
        panels: Vec<PanelView>,
    },
    SummaryUpdate {
        channel: Speaker,
        keywords: Vec<String>,
        version: u64,
        request_id: u64,
    },
    SuggestionUpdate {
        words: Vec<String>,
        request_id: u64,
    },
    TriggerState {
        level: f64,
        color: [f64; 3],
    },
    Feedback {
        assist_count: u32,
        confetti_bursts: u32,
        duration_ms: Millis,
    },
}

/// Side effects requested by the reducer.
#[derive(Debug, Clone, PartialEq)]
pub enum Effect {
    Request(BackendRequest),
    Cancel(u64),
    Emit(ServerEvent),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelView {
    pub keywords: Vec<String>,
    pub version: u64,
}

/// Everything a client can see. A client that folds every emitted
/// [`ServerEvent`] into [`Snapshot::default`] ends up equal to the server's
/// own [`super::SessionState::snapshot`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub phase: SessionPhase,
    pub config: FeatureConfig,
    pub trigger_active: bool,
    pub panels: Vec<PanelView>,
    pub self_summary: ChannelView,
    pub other_summary: ChannelView,
    pub suggestion: Vec<String>,
    pub trigger_level: f64,
    pub trigger_color: [f64; 3],
    pub assist_count: u32,
    pub confetti_bursts: u32,
}

impl Default for Snapshot {
    fn default() -> Self {
        let config = FeatureConfig::default();
        Self {
            phase: SessionPhase::FunctionSelection,
            config,
            trigger_active: false,
            panels: PanelId::ALL
                .iter()
                .map(|&panel| PanelView {
                    panel,
                    eligible: config.enables(panel),
                    state: PanelDisplay::Hidden,
                    since_ms: None,
                    opacity: 0.0,
                    dimmed: false,
                    popup: false,
                })
                .collect(),
            self_summary: ChannelView {
                keywords: vec![],
                version: 0,
            },
            other_summary: ChannelView {
                keywords: vec![],
                version: 0,
            },
            suggestion: vec![],
            trigger_level: 0.0,
            trigger_color: crate::offtopic::NEUTRAL_RGB,
            assist_count: 0,
            confetti_bursts: 0,
        }
    }
}

impl Snapshot {
    pub fn apply(&mut self, event: &ServerEvent) {
        match event {
            ServerEvent::ConfigUpdated { config } => {
                self.config = *config;
                for p in &mut self.panels {
                    p.eligible = config.enables(p.panel);
                }
            }
            ServerEvent::PhaseChanged { phase, config } => {
                self.phase = *phase;
                self.config = *config;
            }
            ServerEvent::PanelsState {
                trigger_active,
                assist_count,
                panels,
            } => {
                self.trigger_active = *trigger_active;
                self.assist_count = *assist_count;
                self.panels = panels.clone();
            }
            ServerEvent::SummaryUpdate {
                channel,
                keywords,
                version,
                ..
            } => {
                let view = match channel {
                    Speaker::SelfUser => &mut self.self_summary,
                    Speaker::Partner => &mut self.other_summary,
                };
                view.keywords = keywords.clone();
                view.version = *version;
            }
            ServerEvent::SuggestionUpdate { words, .. } => self.suggestion = words.clone(),
            ServerEvent::TriggerState { level, color } => {
                self.trigger_level = *level;
                self.trigger_color = *color;
            }
            ServerEvent::Feedback {
                assist_count,
                confetti_bursts,
                ..
            } => {
                self.assist_count = *assist_count;
                self.confetti_bursts = *confetti_bursts;
            }
        }
    }
}
