//! Session measurements: pauses, off-topic episodes, assist counts and
//! backend response statistics, plus the paired signed-rank test used to
//! compare sessions with and without assistance.

pub mod stats;
pub mod wilcoxon;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::Channel;
use crate::ingest::{Annotation, Speaker, Utterance};
use crate::offtopic::{Verdict, VerdictRecord};
use crate::session::{EventKind, SessionError, SessionEvent, SessionPhase, SessionState};
use crate::Millis;

pub use stats::{mean, sample_sd};
pub use wilcoxon::{wilcoxon_signed_rank, Method, WilcoxonError, WilcoxonResult};

pub const DEFAULT_PAUSE_THRESHOLD_MS: Millis = 2000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("both verdicts and annotations were supplied")]
    AmbiguousSource,
    #[error("no off-topic source supplied")]
    NoSource,
    #[error("session never reached the feedback phase")]
    SessionIncomplete,
    #[error("event {index} of the log is invalid: {source}")]
    InvalidLog {
        index: usize,
        #[source]
        source: SessionError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pause {
    pub from_ms: Millis,
    pub to_ms: Millis,
    pub duration_ms: Millis,
}

/// Silences of at least `threshold_ms` that end with the user speaking. The
/// silence runs from the latest end of any earlier utterance to the start of
/// the user's utterance. `utterances` must be sorted by start time.
pub fn detect_pauses(utterances: &[Utterance], threshold_ms: Millis) -> Vec<Pause> {
    let mut pauses = Vec::new();
    let mut spoken_until: Option<Millis> = None;
    for u in utterances {
        if let Some(until) = spoken_until {
            let gap = u.t_start_ms.saturating_sub(until);
            if u.speaker == Speaker::SelfUser && u.t_start_ms > until && gap >= threshold_ms {
                pauses.push(Pause {
                    from_ms: until,
                    to_ms: u.t_start_ms,
                    duration_ms: gap,
                });
            }
        }
        spoken_until = Some(spoken_until.map_or(u.t_end_ms, |t| t.max(u.t_end_ms)));
    }
    pauses
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeSource {
    DetectorVerdicts,
    Annotation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OffTopicEpisode {
    pub from_ms: Millis,
    pub to_ms: Millis,
    pub source: EpisodeSource,
}

impl OffTopicEpisode {
    pub fn duration_ms(&self) -> Millis {
        self.to_ms - self.from_ms
    }
}

/// Episodes from exactly one source. For verdicts, each maximal run of Yes
/// starts at its first utterance and ends where the next No utterance
/// starts, or at `session_end_ms`. Annotation spans are sorted and merged.
pub fn detect_offtopic_episodes(
    verdicts: Option<&[VerdictRecord]>,
    annotations: Option<&[Annotation]>,
    utterances: &[Utterance],
    session_end_ms: Millis,
) -> Result<Vec<OffTopicEpisode>, MetricsError> {
    match (verdicts, annotations) {
        (Some(_), Some(_)) => Err(MetricsError::AmbiguousSource),
        (None, None) => Err(MetricsError::NoSource),
        (Some(v), None) => Ok(verdict_episodes(v, utterances, session_end_ms)),
        (None, Some(a)) => Ok(annotation_episodes(a)),
    }
}

fn verdict_episodes(verdicts: &[VerdictRecord], utterances: &[Utterance], session_end_ms: Millis) -> Vec<OffTopicEpisode> {
    let start_of = |id: u64| {
        utterances
            .binary_search_by_key(&id, |u| u.id)
            .ok()
            .map(|i| utterances[i].t_start_ms)
    };
    let mut episodes = Vec::new();
    let mut open: Option<Millis> = None;
    for v in verdicts {
        let Some(start) = start_of(v.utterance_id) else { continue };
        match (v.verdict, open) {
            (Verdict::Yes, None) => open = Some(start),
            (Verdict::No, Some(from)) => {
                episodes.push(OffTopicEpisode {
                    from_ms: from,
                    to_ms: start.max(from),
                    source: EpisodeSource::DetectorVerdicts,
                });
                open = None;
            }
            _ => {}
        }
    }
    if let Some(from) = open {
        episodes.push(OffTopicEpisode {
            from_ms: from,
            to_ms: session_end_ms.max(from),
            source: EpisodeSource::DetectorVerdicts,
        });
    }
    episodes
}

fn annotation_episodes(annotations: &[Annotation]) -> Vec<OffTopicEpisode> {
    let mut spans: Vec<(Millis, Millis)> = annotations.iter().map(|a| (a.from_ms, a.to_ms)).collect();
    spans.sort_unstable();
    let mut merged: Vec<(Millis, Millis)> = Vec::new();
    for (from, to) in spans {
        match merged.last_mut() {
            Some(last) if from <= last.1 => last.1 = last.1.max(to),
            _ => merged.push((from, to)),
        }
    }
    merged
        .into_iter()
        .map(|(from_ms, to_ms)| OffTopicEpisode {
            from_ms,
            to_ms,
            source: EpisodeSource::Annotation,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmStats {
    /// Responses received.
    pub responses: usize,
    /// Responses whose output passed validation; word statistics use these.
    pub validated: usize,
    pub mean_words: f64,
    pub sd_words: f64,
    pub mean_s: f64,
    pub sd_s: f64,
}

/// Detector verdicts compared with annotated off-topic spans. An utterance
/// counts as annotated when its start falls inside a span. Not one of the
/// session metrics; a diagnostic for the mock or a real backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorDiagnostic {
    pub label: String,
    pub annotated_count: usize,
    pub annotated_avg_ms: f64,
    pub judged_utterances: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub pause_threshold_ms: Millis,
    pub duration_ms: Millis,
    pub utterance_count: usize,
    pub pause_count: usize,
    pub avg_pause_ms: f64,
    pub offtopic_count: usize,
    pub avg_offtopic_ms: f64,
    pub assist_count: u32,
    pub llm_summarize: LlmStats,
    pub llm_suggest: LlmStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detector_vs_annotation: Option<DetectorDiagnostic>,
}

fn llm_stats(state: &SessionState, channels: &[Channel]) -> LlmStats {
    let records: Vec<_> = state.responses.iter().filter(|r| channels.contains(&r.channel)).collect();
    let words: Vec<f64> = records.iter().filter_map(|r| r.words).map(|w| w as f64).collect();
    let secs: Vec<f64> = records.iter().map(|r| r.latency_ms as f64 / 1000.0).collect();
    LlmStats {
        responses: records.len(),
        validated: words.len(),
        mean_words: mean(&words),
        sd_words: sample_sd(&words),
        mean_s: mean(&secs),
        sd_s: sample_sd(&secs),
    }
}

fn diagnostic(verdicts: &[VerdictRecord], utterances: &[Utterance], annotations: &[Annotation]) -> DetectorDiagnostic {
    let spans = annotation_episodes(annotations);
    let inside = |t: Millis| spans.iter().any(|e| e.from_ms <= t && t < e.to_ms);
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    let mut judged = 0;
    for v in verdicts {
        let Ok(i) = utterances.binary_search_by_key(&v.utterance_id, |u| u.id) else { continue };
        judged += 1;
        match (v.verdict == Verdict::Yes, inside(utterances[i].t_start_ms)) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    let durations: Vec<f64> = spans.iter().map(|e| e.duration_ms() as f64).collect();
    DetectorDiagnostic {
        label: "diagnostic: detector verdicts vs annotations".into(),
        annotated_count: spans.len(),
        annotated_avg_ms: mean(&durations),
        judged_utterances: judged,
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
    }
}

/// Replays `events` and measures the finished session. Off-topic metrics
/// come from the detector's verdicts; `annotations`, when given, add the
/// detector diagnostic.
pub fn compute_report(
    events: &[SessionEvent],
    annotations: Option<&[Annotation]>,
    pause_threshold_ms: Millis,
) -> Result<MetricsReport, MetricsError> {
    let state = SessionState::replay_log(events).map_err(|(index, source)| MetricsError::InvalidLog { index, source })?;
    if state.phase != SessionPhase::Feedback {
        return Err(MetricsError::SessionIncomplete);
    }
    let mut utterances: Vec<Utterance> = events
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::UtteranceArrived(u) => Some(u.clone()),
            _ => None,
        })
        .collect();
    utterances.sort_by_key(|u| (u.t_start_ms, u.id));
    let pauses = detect_pauses(&utterances, pause_threshold_ms);
    utterances.sort_by_key(|u| u.id);

    let session_end = state.ended_at_ms.unwrap_or(state.clock_ms);
    let verdicts = &state.offtopic.verdict_log;
    let episodes = detect_offtopic_episodes(Some(verdicts), None, &utterances, session_end)?;

    let pause_ms: Vec<f64> = pauses.iter().map(|p| p.duration_ms as f64).collect();
    let episode_ms: Vec<f64> = episodes.iter().map(|e| e.duration_ms() as f64).collect();
    Ok(MetricsReport {
        pause_threshold_ms,
        duration_ms: state.duration_ms(),
        utterance_count: utterances.len(),
        pause_count: pauses.len(),
        avg_pause_ms: mean(&pause_ms),
        offtopic_count: episodes.len(),
        avg_offtopic_ms: mean(&episode_ms),
        assist_count: state.assist_count,
        llm_summarize: llm_stats(&state, &[Channel::SelfSummary, Channel::OtherSummary]),
        llm_suggest: llm_stats(&state, &[Channel::Suggestion]),
        detector_vs_annotation: annotations.map(|a| diagnostic(verdicts, &utterances, a)),
    })
}

pub fn report_to_json(report: &MetricsReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn utt(id: u64, start: Millis, end: Millis, speaker: Speaker) -> Utterance {
        Utterance {
            id,
            t_start_ms: start,
            t_end_ms: end,
            speaker,
            text: "x".into(),
        }
    }

    #[test]
    fn pauses_before_user_utterances() {
        assert!(detect_pauses(&[], 2000).is_empty());
        // gaps 1500, 2500, 4000 before user utterances
        let utts = [
            utt(1, 0, 1000, Speaker::Partner),
            utt(2, 2500, 3000, Speaker::SelfUser),
            utt(3, 5500, 6000, Speaker::SelfUser),
            utt(4, 10_000, 11_000, Speaker::SelfUser),
        ];
        let p = detect_pauses(&utts, 2000);
        assert_eq!(p.len(), 2);
        assert_eq!(mean(&p.iter().map(|p| p.duration_ms as f64).collect::<Vec<_>>()), 3250.0);
        let partner_gap = [utt(1, 0, 1000, Speaker::SelfUser), utt(2, 4000, 5000, Speaker::Partner)];
        assert!(detect_pauses(&partner_gap, 2000).is_empty());
    }

    #[test]
    fn overlapping_speech_is_not_silence() {
        let utts = [
            utt(1, 0, 9000, Speaker::Partner),
            utt(2, 1000, 2000, Speaker::SelfUser),
            utt(3, 5000, 6000, Speaker::SelfUser),
        ];
        assert!(detect_pauses(&utts, 2000).is_empty());
    }

    fn verdicts(list: &[(u64, Verdict)]) -> Vec<VerdictRecord> {
        list.iter()
            .map(|&(utterance_id, verdict)| VerdictRecord {
                utterance_id,
                verdict,
                unparsed: false,
            })
            .collect()
    }

    #[test]
    fn episodes_from_runs() {
        use Verdict::*;
        let utts: Vec<Utterance> = (1..=5).map(|i| utt(i, i * 1000, i * 1000 + 500, Speaker::SelfUser)).collect();
        let v = verdicts(&[(1, No), (2, Yes), (3, Yes), (4, No), (5, Yes)]);
        let eps = detect_offtopic_episodes(Some(&v), None, &utts, 9000).unwrap();
        assert_eq!(
            eps.iter().map(|e| (e.from_ms, e.to_ms)).collect::<Vec<_>>(),
            [(2000, 4000), (5000, 9000)]
        );
        let none = verdicts(&[(1, No), (2, No)]);
        assert!(detect_offtopic_episodes(Some(&none), None, &utts, 9000).unwrap().is_empty());
        assert_eq!(
            detect_offtopic_episodes(Some(&v), Some(&[]), &utts, 9000),
            Err(MetricsError::AmbiguousSource)
        );
    }

    #[test]
    fn annotations_merge() {
        let a = [
            Annotation { from_ms: 5000, to_ms: 6000 },
            Annotation { from_ms: 1000, to_ms: 3000 },
            Annotation { from_ms: 2000, to_ms: 4000 },
        ];
        let eps = detect_offtopic_episodes(None, Some(&a), &[], 0).unwrap();
        assert_eq!(
            eps.iter().map(|e| (e.from_ms, e.to_ms)).collect::<Vec<_>>(),
            [(1000, 4000), (5000, 6000)]
        );
    }

    #[test]
    fn incomplete_session_rejected() {
        let s = SessionState::open("t", Default::default());
        assert_eq!(compute_report(&s.event_log, None, 2000), Err(MetricsError::SessionIncomplete));
    }
}
