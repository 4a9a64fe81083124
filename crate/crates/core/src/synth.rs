//! Seeded synthetic conversations for tests and benchmarks.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ingest::{Annotation, Speaker, Transcript, Utterance};

pub const SYNTH_TOPIC: &str = "What is your favorite place in the city you currently live in?";

const ON_TOPIC: &[&str] = &[
    "park", "river", "bench", "maple", "tree", "ducks", "city", "place", "favorite", "walk", "quiet", "afternoon",
    "view", "calm", "apartment", "read", "weekday", "sunset", "market", "street",
];
const OFF_TOPIC: &[&str] = &[
    "cereal", "breakfast", "taxes", "football", "printer", "dentist", "spreadsheet", "voltage", "laundry", "invoice",
    "hamster", "passport",
];
const FILLER: &[&str] = &["the", "and", "i", "really", "like", "we", "it", "is", "so", "um", "yeah", "a", "to"];

/// `n` utterances with random speakers, lengths and gaps. Runs of off-topic
/// vocabulary are annotated.
pub fn synth_transcript(seed: u64, n: usize) -> Transcript {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut utterances = Vec::with_capacity(n);
    let mut annotations = Vec::new();
    let mut clock = rng.random_range(0..3000u64);
    let mut off_run: Option<u64> = None;
    for id in 1..=n as u64 {
        let speaker = if rng.random_bool(0.5) { Speaker::SelfUser } else { Speaker::Partner };
        let off = rng.random_bool(0.2);
        let len = rng.random_range(2..=12);
        let words: Vec<&str> = (0..len)
            .map(|_| {
                let pool = if rng.random_bool(0.4) {
                    FILLER
                } else if off {
                    OFF_TOPIC
                } else {
                    ON_TOPIC
                };
                *pool.choose(&mut rng).expect("non-empty pool")
            })
            .collect();
        let start = clock;
        let end = start + 300 * len as u64 + rng.random_range(0..800);
        match (off, off_run) {
            (true, None) => off_run = Some(start),
            (false, Some(from)) => {
                annotations.push(Annotation { from_ms: from, to_ms: start });
                off_run = None;
            }
            _ => {}
        }
        utterances.push(Utterance {
            id,
            t_start_ms: start,
            t_end_ms: end,
            speaker,
            text: words.join(" "),
        });
        let gap = if rng.random_bool(0.2) { rng.random_range(2000..6000) } else { rng.random_range(0..1800) };
        clock = end + gap;
    }
    if let Some(from) = off_run {
        annotations.push(Annotation { from_ms: from, to_ms: clock });
    }
    Transcript {
        topic: SYNTH_TOPIC.into(),
        utterances,
        annotations,
    }
}
