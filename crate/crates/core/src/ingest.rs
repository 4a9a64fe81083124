//! Transcript files, replay pacing and the live utterance feed.
//!
//! Transcript format, one JSON object per LF-terminated line:
//!
//! ```text
//! {"topic": "What is your favorite place in the city you currently live in?"}
//! {"id":1,"t_start_ms":0,"t_end_ms":2400,"speaker":"partner","text":"..."}
//! {"annotation":"offtopic","from_ms":61000,"to_ms":70500}
//! ```
//!
//! Annotation lines are optional and may only follow the utterance lines.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Millis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Speaker {
    #[serde(rename = "self")]
    SelfUser,
    #[serde(rename = "partner")]
    Partner,
}

impl Speaker {
    pub fn label(self) -> &'static str {
        match self {
            Speaker::SelfUser => "User",
            Speaker::Partner => "Partner",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: u64,
    pub t_start_ms: Millis,
    pub t_end_ms: Millis,
    pub speaker: Speaker,
    pub text: String,
}

/// Ground-truth off-topic span, used only for metric diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub from_ms: Millis,
    pub to_ms: Millis,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Transcript {
    pub topic: String,
    pub utterances: Vec<Utterance>,
    pub annotations: Vec<Annotation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("i/o error: {0}")]
    Io(String),
    #[error("missing topic header")]
    MissingHeader,
    #[error("malformed json: {0}")]
    Json(String),
    #[error("unrecognized record")]
    UnknownRecord,
    #[error("t_end_ms {end} precedes t_start_ms {start}")]
    EndBeforeStart { start: Millis, end: Millis },
    #[error("utterance text is empty")]
    EmptyText,
    #[error("utterance id {id} does not increase past {prev}")]
    IdNotIncreasing { prev: u64, id: u64 },
    #[error("utterance starts at {start} before the previous one at {prev}")]
    Unsorted { prev: Millis, start: Millis },
    #[error("utterance overlaps the same speaker's previous utterance ending at {prev_end}")]
    Overlap { prev_end: Millis },
    #[error("utterance after annotation lines")]
    UtteranceAfterAnnotation,
    #[error("annotation ends before it starts")]
    BadAnnotation,
}

#[derive(Deserialize)]
struct Header {
    topic: String,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Record {
    Annotation {
        annotation: String,
        from_ms: Millis,
        to_ms: Millis,
    },
    Utterance(Utterance),
}

fn json_error(line: usize, err: serde_json::Error) -> ParseError {
    ParseError {
        line,
        column: err.column().max(1),
        kind: ParseErrorKind::Json(err.to_string()),
    }
}

pub fn parse_transcript<R: BufRead>(reader: R) -> Result<Transcript, ParseError> {
    let mut transcript: Option<Transcript> = None;
    let mut last_end: BTreeMap<Speaker, Millis> = BTreeMap::new();

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let at = |kind| ParseError {
            line: lineno,
            column: 1,
            kind,
        };
        let line = line.map_err(|e| at(ParseErrorKind::Io(e.to_string())))?;
        if line.trim().is_empty() {
            continue;
        }
        let Some(t) = transcript.as_mut() else {
            let header: Header = serde_json::from_str(&line).map_err(|e| json_error(lineno, e))?;
            transcript = Some(Transcript {
                topic: header.topic,
                ..Transcript::default()
            });
            continue;
        };

        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| json_error(lineno, e))?;
        let record: Record =
            serde_json::from_value(value).map_err(|_| at(ParseErrorKind::UnknownRecord))?;
        match record {
            Record::Annotation {
                annotation,
                from_ms,
                to_ms,
            } => {
                if annotation != "offtopic" {
                    return Err(at(ParseErrorKind::UnknownRecord));
                }
                if to_ms < from_ms {
                    return Err(at(ParseErrorKind::BadAnnotation));
                }
                t.annotations.push(Annotation { from_ms, to_ms });
            }
            Record::Utterance(utt) => {
                if !t.annotations.is_empty() {
                    return Err(at(ParseErrorKind::UtteranceAfterAnnotation));
                }
                if utt.t_end_ms < utt.t_start_ms {
                    return Err(at(ParseErrorKind::EndBeforeStart {
                        start: utt.t_start_ms,
                        end: utt.t_end_ms,
                    }));
                }
                if utt.text.trim().is_empty() {
                    return Err(at(ParseErrorKind::EmptyText));
                }
                if let Some(prev) = t.utterances.last() {
                    if utt.id <= prev.id {
                        return Err(at(ParseErrorKind::IdNotIncreasing {
                            prev: prev.id,
                            id: utt.id,
                        }));
                    }
                    if utt.t_start_ms < prev.t_start_ms {
                        return Err(at(ParseErrorKind::Unsorted {
                            prev: prev.t_start_ms,
                            start: utt.t_start_ms,
                        }));
                    }
                }
                if let Some(&prev_end) = last_end.get(&utt.speaker) {
                    if utt.t_start_ms < prev_end {
                        return Err(at(ParseErrorKind::Overlap { prev_end }));
                    }
                }
                last_end.insert(utt.speaker, utt.t_end_ms);
                t.utterances.push(utt);
            }
        }
    }

    transcript.ok_or(ParseError {
        line: 1,
        column: 1,
        kind: ParseErrorKind::MissingHeader,
    })
}

pub fn parse_transcript_str(text: &str) -> Result<Transcript, ParseError> {
    parse_transcript(text.as_bytes())
}

/// Writes the canonical form of a transcript.
pub fn serialize_transcript(t: &Transcript) -> String {
    let mut out = format!(
        "{{\"topic\": {}}}\n",
        serde_json::to_string(&t.topic).expect("string serializes")
    );
    for u in &t.utterances {
        out.push_str(&serde_json::to_string(u).expect("utterance serializes"));
        out.push('\n');
    }
    for a in &t.annotations {
        out.push_str(&format!(
            "{{\"annotation\":\"offtopic\",\"from_ms\":{},\"to_ms\":{}}}\n",
            a.from_ms, a.to_ms
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("replay speed must be a finite ratio >= 0, got {0}")]
pub struct InvalidSpeed(pub f64);

/// Wall-clock pacing for replays. A speed of 0 never sleeps.
#[derive(Debug, Clone)]
pub struct Pacer {
    speed: f64,
    origin: Instant,
}

impl Pacer {
    pub fn new(speed: f64) -> Result<Self, InvalidSpeed> {
        if !speed.is_finite() || speed < 0.0 {
            return Err(InvalidSpeed(speed));
        }
        Ok(Self {
            speed,
            origin: Instant::now(),
        })
    }

    pub fn unpaced() -> Self {
        Self {
            speed: 0.0,
            origin: Instant::now(),
        }
    }

    pub fn speed(&self) -> f64 {
        self.speed
    }

    /// Blocks until logical time `at_ms` is due on the wall clock.
    pub fn wait_until(&self, at_ms: Millis) {
        if self.speed == 0.0 {
            return;
        }
        let due = self.origin + Duration::from_secs_f64(at_ms as f64 / 1000.0 / self.speed);
        let now = Instant::now();
        if due > now {
            std::thread::sleep(due - now);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReplayItem {
    Utterance(Utterance),
    End,
}

/// Ordered arrivals for a transcript: each utterance arrives once it has
/// been fully spoken, clamped so arrival times never go backwards.
pub fn arrivals(transcript: &Transcript) -> Vec<(Millis, ReplayItem)> {
    let mut out = Vec::with_capacity(transcript.utterances.len() + 1);
    let mut last = 0;
    for u in &transcript.utterances {
        last = last.max(u.t_end_ms);
        out.push((last, ReplayItem::Utterance(u.clone())));
    }
    out.push((last, ReplayItem::End));
    out
}

/// Paced iterator over [`arrivals`]. Logical timestamps do not depend on speed.
pub struct Replay {
    items: std::vec::IntoIter<(Millis, ReplayItem)>,
    pacer: Pacer,
}

pub fn replay(transcript: &Transcript, speed: f64) -> Result<Replay, InvalidSpeed> {
    Ok(Replay {
        items: arrivals(transcript).into_iter(),
        pacer: Pacer::new(speed)?,
    })
}

impl Iterator for Replay {
    type Item = (Millis, ReplayItem);

    fn next(&mut self) -> Option<Self::Item> {
        let item = self.items.next()?;
        self.pacer.wait_until(item.0);
        Some(item)
    }
}

/// An utterance as sent by a live client.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LiveUtterance {
    pub speaker: Speaker,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_ms: Option<Millis>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum FeedError {
    #[error("utterance text is empty")]
    EmptyText,
    #[error("session already has a speaker source")]
    SourceConflict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Live,
    Replay,
}

/// Admits exactly one utterance source per session.
#[derive(Debug, Default, Clone)]
pub struct SourceGuard {
    attached: Option<SourceKind>,
}

impl SourceGuard {
    pub fn attach(&mut self, kind: SourceKind) -> Result<(), FeedError> {
        match self.attached {
            Some(_) => Err(FeedError::SourceConflict),
            None => {
                self.attached = Some(kind);
                Ok(())
            }
        }
    }

    pub fn attached(&self) -> Option<SourceKind> {
        self.attached
    }
}

/// Assigns ids and session-clock times to live utterances.
#[derive(Debug, Default, Clone)]
pub struct LiveFeed {
    next_id: u64,
    last_end: BTreeMap<Speaker, Millis>,
}

impl LiveFeed {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn accept(&mut self, msg: LiveUtterance, now_ms: Millis) -> Result<Utterance, FeedError> {
        let text = msg.text.trim();
        if text.is_empty() {
            return Err(FeedError::EmptyText);
        }
        let floor = self.last_end.get(&msg.speaker).copied().unwrap_or(0);
        let start = now_ms
            .saturating_sub(msg.duration_ms.unwrap_or(0))
            .max(floor)
            .min(now_ms);
        self.next_id += 1;
        self.last_end.insert(msg.speaker, now_ms);
        Ok(Utterance {
            id: self.next_id,
            t_start_ms: start,
            t_end_ms: now_ms,
            speaker: msg.speaker,
            text: text.to_owned(),
        })
    }
}
