//! Engine tunables and the JSON config file schema.

use serde::{Deserialize, Serialize};

use crate::session::FeatureConfig;
use crate::Millis;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineSettings {
    /// Panels hide this long after activation.
    pub panel_fade_ms: Millis,
    /// Opacity factor applied to visible panels that are not focused.
    pub dim_opacity: f64,
    pub suggestion_cadence_ms: Millis,
    /// In-flight suggestion requests older than this are cancelled.
    pub suggestion_cancel_after_ms: Millis,
    /// Scheduler tick granularity used by drivers.
    pub tick_ms: Millis,
    /// Number of net "Yes" verdicts needed to reach the deepest hue.
    pub offtopic_ramp_k: u32,
    /// Keep the transcript in the feedback report. Off by default.
    pub retain_transcript: bool,
}

impl Default for EngineSettings {
    fn default() -> Self {
        Self {
            panel_fade_ms: 5000,
            dim_opacity: 0.35,
            suggestion_cadence_ms: 1000,
            suggestion_cancel_after_ms: 3000,
            tick_ms: 50,
            offtopic_ramp_k: 3,
            retain_transcript: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelMillis {
    pub summarize: Millis,
    pub suggest: Millis,
    pub offtopic: Millis,
}

impl ChannelMillis {
    pub const fn uniform(ms: Millis) -> Self {
        Self {
            summarize: ms,
            suggest: ms,
            offtopic: ms,
        }
    }
}

impl Default for ChannelMillis {
    fn default() -> Self {
        Self {
            summarize: 1250,
            suggest: 1950,
            offtopic: 1250,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockSettings {
    pub latency_ms: ChannelMillis,
    pub latency_sd_ms: ChannelMillis,
}

impl Default for MockSettings {
    fn default() -> Self {
        Self {
            latency_ms: ChannelMillis::default(),
            latency_sd_ms: ChannelMillis {
                summarize: 400,
                suggest: 710,
                offtopic: 400,
            },
        }
    }
}

impl MockSettings {
    /// Mean latencies without jitter.
    pub fn fixed() -> Self {
        Self {
            latency_sd_ms: ChannelMillis::uniform(0),
            ..Self::default()
        }
    }

    pub fn instant() -> Self {
        Self {
            latency_ms: ChannelMillis::uniform(0),
            latency_sd_ms: ChannelMillis::uniform(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpSettings {
    pub url: String,
    pub model: String,
    pub timeout_ms: Millis,
}

impl Default for HttpSettings {
    fn default() -> Self {
        Self {
            url: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4o".into(),
            timeout_ms: 10_000,
        }
    }
}

/// Contents of the `--config` JSON file. Every field is optional.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub features: FeatureConfig,
    pub engine: EngineSettings,
    pub mock: MockSettings,
    pub http: HttpSettings,
}

impl AppConfig {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}
