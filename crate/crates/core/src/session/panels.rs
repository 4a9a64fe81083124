//! Panel lifecycle: gaze toggling, focus dimming and the fade timer.

use serde::{Deserialize, Serialize};

use super::view::{Effect, PanelDisplay, PanelView, ServerEvent};
use super::{PanelId, SessionState};
use crate::Millis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum PanelLifecycle {
    Hidden,
    Visible { since_ms: Millis },
    Focused { since_ms: Millis },
}

impl PanelLifecycle {
    pub fn since(&self) -> Option<Millis> {
        match *self {
            PanelLifecycle::Hidden => None,
            PanelLifecycle::Visible { since_ms } | PanelLifecycle::Focused { since_ms } => Some(since_ms),
        }
    }

    pub fn is_shown(&self) -> bool {
        !matches!(self, PanelLifecycle::Hidden)
    }

    /// Shown and not yet past its fade deadline at `now`.
    pub fn is_shown_at(&self, now: Millis, fade_ms: Millis) -> bool {
        self.since().is_some_and(|since| now.saturating_sub(since) < fade_ms)
    }
}

impl SessionState {
    pub fn any_panel_shown(&self) -> bool {
        self.panels.values().any(PanelLifecycle::is_shown)
    }

    pub fn focused_panel(&self) -> Option<PanelId> {
        self.panels
            .iter()
            .find(|(_, l)| matches!(l, PanelLifecycle::Focused { .. }))
            .map(|(&p, _)| p)
    }

    pub fn panel_views(&self) -> Vec<PanelView> {
        let focused = self.focused_panel();
        PanelId::ALL
            .iter()
            .map(|&panel| {
                let lifecycle = self.panels.get(&panel).copied().unwrap_or(PanelLifecycle::Hidden);
                let (state, opacity, dimmed, popup) = match lifecycle {
                    PanelLifecycle::Hidden => (PanelDisplay::Hidden, 0.0, false, false),
                    PanelLifecycle::Focused { .. } => {
                        (PanelDisplay::Focused, 1.0, false, self.config.popup_animation)
                    }
                    PanelLifecycle::Visible { .. } if focused.is_some() => {
                        (PanelDisplay::Visible, self.settings.dim_opacity, true, false)
                    }
                    PanelLifecycle::Visible { .. } => (PanelDisplay::Visible, 1.0, false, false),
                };
                PanelView {
                    panel,
                    eligible: self.config.enables(panel),
                    state,
                    since_ms: lifecycle.since(),
                    opacity,
                    dimmed,
                    popup,
                }
            })
            .collect()
    }

    pub(super) fn panels_event(&self) -> Effect {
        Effect::Emit(ServerEvent::PanelsState {
            trigger_active: self.trigger_active,
            assist_count: self.assist_count,
            panels: self.panel_views(),
        })
    }

    pub(super) fn hide_all_panels(&mut self) -> bool {
        let mut changed = false;
        for lifecycle in self.panels.values_mut() {
            if lifecycle.is_shown() {
                *lifecycle = PanelLifecycle::Hidden;
                changed = true;
            }
        }
        changed |= self.trigger_active;
        self.trigger_active = false;
        changed
    }

    /// Hides panels whose fade deadline has passed.
    pub(super) fn expire_panels(&mut self, now: Millis, fx: &mut Vec<Effect>) {
        let fade = self.settings.panel_fade_ms;
        let mut changed = false;
        for lifecycle in self.panels.values_mut() {
            if lifecycle.is_shown() && !lifecycle.is_shown_at(now, fade) {
                *lifecycle = PanelLifecycle::Hidden;
                changed = true;
            }
        }
        if changed {
            if !self.any_panel_shown() {
                self.trigger_active = false;
            }
            fx.push(self.panels_event());
        }
    }

    /// A downward glance: opens every eligible panel, or dismisses them all
    /// when any is shown (focused or not).
    pub fn trigger_gaze(&mut self, at_ms: Millis, fx: &mut Vec<Effect>) {
        if self.phase != super::SessionPhase::Conversation {
            return;
        }
        if self.any_panel_shown() {
            self.hide_all_panels();
            fx.push(self.panels_event());
            return;
        }
        let mut opened = false;
        for panel in PanelId::ALL {
            if self.config.enables(panel) {
                self.panels.insert(panel, PanelLifecycle::Visible { since_ms: at_ms });
                opened = true;
            }
        }
        if opened {
            self.trigger_active = true;
            self.assist_count += 1;
            fx.push(self.panels_event());
        }
    }

    pub(super) fn focus_panel(&mut self, panel: PanelId, fx: &mut Vec<Effect>) {
        for (&p, lifecycle) in self.panels.iter_mut() {
            *lifecycle = match *lifecycle {
                PanelLifecycle::Focused { since_ms } if p != panel => PanelLifecycle::Visible { since_ms },
                PanelLifecycle::Visible { since_ms } if p == panel => PanelLifecycle::Focused { since_ms },
                other => other,
            };
        }
        fx.push(self.panels_event());
    }

    pub(super) fn unfocus(&mut self, fx: &mut Vec<Effect>) {
        let mut changed = false;
        for lifecycle in self.panels.values_mut() {
            if let PanelLifecycle::Focused { since_ms } = *lifecycle {
                *lifecycle = PanelLifecycle::Visible { since_ms };
                changed = true;
            }
        }
        if changed {
            fx.push(self.panels_event());
        }
    }
}
