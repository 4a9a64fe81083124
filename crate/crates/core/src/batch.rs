//! Batch replays and reports. With the `parallel` feature (on by default) the
//! work is spread over the rayon pool; the sequential path is always built and
//! produces identical results in identical order.

use crate::ingest::{Pacer, Transcript};
use crate::metrics::{compute_report, MetricsError, MetricsReport};
use crate::session::SessionEvent;
use crate::simulate::{run_replay, ReplayConfig, ReplayOutcome};
use crate::ingest::Annotation;
use crate::Millis;

pub fn map_sequential<T, R>(items: &[T], f: impl Fn(&T) -> R) -> Vec<R> {
    items.iter().map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn map_parallel<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

/// Parallel when the `parallel` feature is enabled, sequential otherwise.
pub fn map_batch<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    #[cfg(feature = "parallel")]
    {
        map_parallel(items, f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_sequential(items, f)
    }
}

/// Unpaced replays of one transcript, one per seed.
pub fn replay_seeds(transcript: &Transcript, config: &ReplayConfig, seeds: &[u64]) -> Vec<ReplayOutcome> {
    map_batch(seeds, |&seed| replay_one(transcript, config, seed))
}

pub fn replay_seeds_sequential(transcript: &Transcript, config: &ReplayConfig, seeds: &[u64]) -> Vec<ReplayOutcome> {
    map_sequential(seeds, |&seed| replay_one(transcript, config, seed))
}

fn replay_one(transcript: &Transcript, config: &ReplayConfig, seed: u64) -> ReplayOutcome {
    let cfg = ReplayConfig {
        seed,
        ..config.clone()
    };
    run_replay(transcript, &cfg, &Pacer::unpaced())
}

/// One report per event log.
pub fn reports(
    logs: &[Vec<SessionEvent>],
    annotations: Option<&[Annotation]>,
    pause_threshold_ms: Millis,
) -> Vec<Result<MetricsReport, MetricsError>> {
    map_batch(logs, |log| compute_report(log, annotations, pause_threshold_ms))
}

pub fn reports_sequential(
    logs: &[Vec<SessionEvent>],
    annotations: Option<&[Annotation]>,
    pause_threshold_ms: Millis,
) -> Vec<Result<MetricsReport, MetricsError>> {
    map_sequential(logs, |log| compute_report(log, annotations, pause_threshold_ms))
}
