//! The JSON message catalog shared by both transports.
//!
//! Client messages are flat objects tagged by `type`. Server messages are
//! envelopes `{"type","session","seq","payload"}` with `seq` strictly
//! increasing per session.

use parley_core::ingest::{LiveUtterance, Speaker};
use parley_core::session::{FeatureConfig, PanelId, ServerEvent, Snapshot};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Upper bound for one protocol line, in bytes, excluding the newline.
pub const MAX_LINE_BYTES: usize = 64 * 1024;

#[derive(Debug, Clone, PartialEq)]
pub enum ClientMessage {
    Hello { topic: Option<String> },
    SetConfig { config: FeatureConfig },
    Confirm { config: Option<FeatureConfig> },
    Utterance(LiveUtterance),
    GazeTrigger,
    GazeFocus { panel: PanelId },
    GazeUnfocus,
    TriggerPoke,
    ConfettiTap,
    End,
    Snapshot,
}

pub const CLIENT_TYPES: &[&str] = &[
    "hello",
    "set_config",
    "confirm",
    "utterance",
    "gaze_trigger",
    "gaze_focus",
    "gaze_unfocus",
    "trigger_poke",
    "confetti_tap",
    "end",
    "snapshot",
];

/// A rejected client message. `field` names the offending field when known.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireError {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

impl WireError {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Self {
            code: code.into(),
            message: message.into(),
            field: None,
        }
    }

    pub fn with_field(mut self, field: impl Into<String>) -> Self {
        self.field = Some(field.into());
        self
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HelloBody {
    #[serde(default)]
    topic: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigBody {
    config: FeatureConfig,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfirmBody {
    #[serde(default)]
    config: Option<FeatureConfig>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct UtteranceBody {
    speaker: Speaker,
    text: String,
    #[serde(default)]
    duration_ms: Option<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FocusBody {
    panel: PanelId,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Empty {}

/// Pulls the first backquoted name out of a serde message such as
/// "unknown field `foo`, expected ...".
fn offending_field(message: &str) -> Option<String> {
    let start = message.find('`')? + 1;
    let len = message[start..].find('`')?;
    Some(message[start..start + len].to_owned())
}

fn body<T: DeserializeOwned>(ty: &str, fields: Map<String, Value>) -> Result<T, WireError> {
    serde_json::from_value(Value::Object(fields)).map_err(|e| {
        let message = format!("{ty}: {e}");
        let err = WireError::new("schema", message);
        match offending_field(&e.to_string()) {
            Some(f) => err.with_field(f),
            None => err,
        }
    })
}

pub fn parse_client_message(line: &str) -> Result<ClientMessage, WireError> {
    if line.len() > MAX_LINE_BYTES {
        return Err(WireError::new("too_large", format!("message exceeds {MAX_LINE_BYTES} bytes")));
    }
    let value: Value =
        serde_json::from_str(line).map_err(|e| WireError::new("bad_json", e.to_string()))?;
    let Value::Object(mut fields) = value else {
        return Err(WireError::new("schema", "message must be a JSON object"));
    };
    let ty = match fields.remove("type") {
        Some(Value::String(s)) => s,
        Some(_) => return Err(WireError::new("schema", "`type` must be a string").with_field("type")),
        None => return Err(WireError::new("schema", "missing `type`").with_field("type")),
    };
    // clients may echo their session id; it carries no meaning on a connection
    fields.remove("session");
    let msg = match ty.as_str() {
        "hello" => ClientMessage::Hello {
            topic: body::<HelloBody>(&ty, fields)?.topic,
        },
        "set_config" => ClientMessage::SetConfig {
            config: body::<ConfigBody>(&ty, fields)?.config,
        },
        "confirm" => ClientMessage::Confirm {
            config: body::<ConfirmBody>(&ty, fields)?.config,
        },
        "utterance" => {
            let b: UtteranceBody = body(&ty, fields)?;
            ClientMessage::Utterance(LiveUtterance {
                speaker: b.speaker,
                text: b.text,
                duration_ms: b.duration_ms,
            })
        }
        "gaze_focus" => ClientMessage::GazeFocus {
            panel: body::<FocusBody>(&ty, fields)?.panel,
        },
        other => {
            let msg = match other {
                "gaze_trigger" => ClientMessage::GazeTrigger,
                "gaze_unfocus" => ClientMessage::GazeUnfocus,
                "trigger_poke" => ClientMessage::TriggerPoke,
                "confetti_tap" => ClientMessage::ConfettiTap,
                "end" => ClientMessage::End,
                "snapshot" => ClientMessage::Snapshot,
                _ => {
                    return Err(WireError::new("unknown_type", format!("unknown message type {other:?}"))
                        .with_field("type"))
                }
            };
            body::<Empty>(&ty, fields)?;
            msg
        }
    };
    Ok(msg)
}

/// Server-only messages that are not session state changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ControlEvent {
    SessionCreated {
        topic: String,
        config: FeatureConfig,
        snapshot: Snapshot,
    },
    Error(WireError),
    Snapshot {
        snapshot: Snapshot,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    #[serde(rename = "type")]
    pub kind: String,
    pub session: String,
    pub seq: u64,
    pub payload: Value,
}

/// Splits `{"type": t, ...rest}` into `(t, rest)`.
fn split_tagged<T: Serialize>(event: &T) -> (String, Value) {
    let Value::Object(mut map) = serde_json::to_value(event).expect("events serialize") else {
        unreachable!("tagged enums serialize as objects")
    };
    let kind = match map.remove("type") {
        Some(Value::String(s)) => s,
        _ => unreachable!("tagged enums carry a string tag"),
    };
    (kind, Value::Object(map))
}

impl Envelope {
    pub fn state(session: &str, seq: u64, event: &ServerEvent) -> Self {
        let (kind, payload) = split_tagged(event);
        Self {
            kind,
            session: session.into(),
            seq,
            payload,
        }
    }

    pub fn control(session: &str, seq: u64, event: &ControlEvent) -> Self {
        let (kind, payload) = split_tagged(event);
        Self {
            kind,
            session: session.into(),
            seq,
            payload,
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("envelope serializes")
    }

    /// The state event carried by this envelope, if it is one.
    pub fn server_event(&self) -> Option<ServerEvent> {
        let mut map = self.payload.as_object()?.clone();
        map.insert("type".into(), Value::String(self.kind.clone()));
        serde_json::from_value(Value::Object(map)).ok()
    }
}
