//! Offline analytics over job event logs.
//!
//! All functions take a slice of [`EventRecord`]s and are pure. Per-job work
//! is spread over rayon when [`ExecMode::Parallel`] is selected.

mod latency;
mod littles;
mod throughput;
mod utilization;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use latency::{latency_decomposition, LatencyReport, StageDurations, StageSummary};
pub use littles::{littles_law_check, trimmed_window, LittleReport};
pub use throughput::{count_transitions, throughput_timeline};
pub use utilization::{run_intervals, time_average_running, utilization_timeline, RunInterval, UtilizationSeries};

use crate::ids::JobId;
use crate::job::EventRecord;
use crate::time::Timestamp;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("analysis window contains no usable data: {0}")]
    EmptyWindow(String),
}

/// Half-open analysis window `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: Timestamp,
    pub end: Timestamp,
}

impl Window {
    pub fn new(start: Timestamp, end: Timestamp) -> Self {
        Window { start, end }
    }

    pub fn duration_secs(&self) -> f64 {
        self.end.secs_since(self.start)
    }

    pub fn contains(&self, t: Timestamp) -> bool {
        t >= self.start && t < self.end
    }

    /// Smallest window covering every event, or `None` for an empty log.
    pub fn spanning(events: &[EventRecord]) -> Option<Window> {
        let start = events.iter().map(|e| e.timestamp).min()?;
        let end = events.iter().map(|e| e.timestamp).max()?;
        Some(Window { start, end })
    }
}

/// One sample of a time series, in seconds relative to the series origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub t_seconds: f64,
    pub value: f64,
}

/// Renders a series as `t_seconds,value` CSV.
pub fn series_csv(series: &[SeriesPoint]) -> String {
    let mut out = String::from("t_seconds,value\n");
    for p in series {
        out.push_str(&format!("{},{}\n", p.t_seconds, p.value));
    }
    out
}

/// Mean, sample standard deviation and nearest-rank 95th percentile.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub sd: f64,
    pub p95: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        let n = values.len();
        if n == 0 {
            return Summary::default();
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Summary { count: n, mean, sd, p95: nearest_rank(values, 0.95) }
    }
}

/// Nearest-rank percentile: the smallest value with at least `q` of the
/// sample at or below it.
pub fn nearest_rank(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (q * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

/// Events grouped per job, each group in log order.
pub(crate) fn by_job(events: &[EventRecord]) -> Vec<(JobId, Vec<&EventRecord>)> {
    let mut map: BTreeMap<JobId, Vec<&EventRecord>> = BTreeMap::new();
    for e in events {
        map.entry(e.job_id).or_default().push(e);
    }
    for group in map.values_mut() {
        group.sort_by_key(|e| (e.timestamp, e.event_id));
    }
    map.into_iter().collect()
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_examples() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(nearest_rank(&v, 0.95), 19.0);
        assert_eq!(nearest_rank(&[5.0], 0.95), 5.0);
        assert_eq!(nearest_rank(&v, 1.0), 20.0);
    }

    #[test]
    fn summary_of_constant() {
        let s = Summary::of(&[2.0, 2.0, 2.0]);
        assert_eq!((s.count, s.mean, s.sd, s.p95), (3, 2.0, 0.0, 2.0));
    }
}
