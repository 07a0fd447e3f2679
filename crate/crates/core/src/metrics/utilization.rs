use serde::{Deserialize, Serialize};

use super::{by_job, Window};
use crate::ids::JobId;
use crate::job::EventRecord;
use crate::state::JobState;
use crate::time::Timestamp;

/// One stay in RUNNING. `end` is `None` while still running at log end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunInterval {
    pub job_id: JobId,
    pub start: Timestamp,
    pub end: Option<Timestamp>,
    /// State the job left RUNNING for.
    pub outcome: Option<JobState>,
}

pub fn run_intervals(events: &[EventRecord]) -> Vec<RunInterval> {
    let mut out = Vec::new();
    for (job_id, evs) in by_job(events) {
        let mut open: Option<Timestamp> = None;
        for e in evs {
            if e.from_state == JobState::Running {
                if let Some(start) = open.take() {
                    out.push(RunInterval { job_id, start, end: Some(e.timestamp), outcome: Some(e.to_state) });
                }
            }
            if e.to_state == JobState::Running {
                open = Some(e.timestamp);
            }
        }
        if let Some(start) = open {
            out.push(RunInterval { job_id, start, end: None, outcome: None });
        }
    }
    out.sort_by_key(|r| (r.start, r.job_id));
    out
}

/// Running-count step changes as `(time, delta)`, sorted, with removals
/// ordered before additions at equal times.
fn deltas(intervals: &[RunInterval]) -> Vec<(Timestamp, i64)> {
    let mut d: Vec<(Timestamp, i64)> = Vec::with_capacity(intervals.len() * 2);
    for r in intervals {
        d.push((r.start, 1));
        if let Some(end) = r.end {
            d.push((end, -1));
        }
    }
    d.sort();
    d
}

/// Time-averaged number of running tasks over `window`.
pub fn time_average_running(intervals: &[RunInterval], window: Window) -> f64 {
    let dur = (window.end - window.start) as f64;
    if dur <= 0.0 {
        return 0.0;
    }
    let busy: i64 = intervals
        .iter()
        .map(|r| {
            let s = r.start.max(window.start);
            let e = r.end.unwrap_or(window.end).min(window.end);
            (e - s).max(0)
        })
        .sum();
    busy as f64 / dur
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct UtilizationSeries {
    /// Seconds from the window start at which either series changes.
    pub timestamps: Vec<f64>,
    pub running_count: Vec<i64>,
    pub provisioned: Vec<f64>,
    /// Busy task-seconds over provisioned task-seconds inside the window.
    pub time_average: f64,
}

fn capacity_at(capacity: &[(Timestamp, f64)], t: Timestamp) -> f64 {
    match capacity.partition_point(|(ct, _)| *ct <= t) {
        0 => 0.0,
        i => capacity[i - 1].1,
    }
}

/// Running-task count against a provisioned-capacity step function given as
/// sorted `(time, capacity)` change points.
pub fn utilization_timeline(events: &[EventRecord], capacity: &[(Timestamp, f64)], window: Window) -> UtilizationSeries {
    let intervals = run_intervals(events);
    let mut changes: Vec<Timestamp> = deltas(&intervals).into_iter().map(|(t, _)| t).collect();
    changes.extend(capacity.iter().map(|(t, _)| *t));
    changes.push(window.start);
    changes.retain(|t| window.contains(*t));
    changes.sort_unstable();
    changes.dedup();

    let d = deltas(&intervals);
    let mut series = UtilizationSeries::default();
    let mut running = 0i64;
    let mut i = 0;
    let mut busy = 0.0;
    let mut provisioned_area = 0.0;
    for (k, &t) in changes.iter().enumerate() {
        while i < d.len() && d[i].0 <= t {
            running += d[i].1;
            i += 1;
        }
        let cap = capacity_at(capacity, t);
        let next = changes.get(k + 1).copied().unwrap_or(window.end);
        let span = next.secs_since(t);
        busy += running as f64 * span;
        provisioned_area += cap * span;
        series.timestamps.push(t.secs_since(window.start));
        series.running_count.push(running);
        series.provisioned.push(cap);
    }
    series.time_average = if provisioned_area > 0.0 { busy / provisioned_area } else { 0.0 };
    series
}

#[cfg(test)]
mod tests {
    use super::super::testlog::log;
    use super::*;
    use JobState::*;

    fn secs(s: f64) -> Timestamp {
        Timestamp::from_secs_f64(s)
    }

    #[test]
    fn single_job_ten_percent() {
        let ev = log(&[(1, StagedIn, 0.0), (1, Running, 20.0), (1, RunDone, 30.0)]);
        let u = utilization_timeline(&ev, &[(secs(0.0), 1.0)], Window::new(secs(0.0), secs(100.0)));
        assert!((u.time_average - 0.10).abs() < 1e-12);
        assert_eq!(u.running_count.iter().max(), Some(&1));
    }

    #[test]
    fn overlapping_jobs_sum() {
        let ev = log(&[(1, Running, 0.0), (2, Running, 5.0), (1, RunDone, 10.0), (2, RunDone, 15.0)]);
        let u = utilization_timeline(&ev, &[(secs(0.0), 2.0)], Window::new(secs(0.0), secs(20.0)));
        assert_eq!(u.running_count.iter().max(), Some(&2));
        assert!((u.time_average - 20.0 / 40.0).abs() < 1e-12);
    }

    #[test]
    fn intervals_track_restarts() {
        let ev = log(&[(1, Running, 0.0), (1, RunTimeout, 4.0), (1, RestartReady, 4.0), (1, Running, 9.0)]);
        let r = run_intervals(&ev);
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].outcome, Some(RunTimeout));
        assert_eq!(r[1].end, None);
    }

    /// Independent oracle: sample the running count at every whole second.
    #[test]
    fn matches_one_hertz_resampling() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut entries = Vec::new();
        let mut raw = Vec::new();
        for j in 0..60u64 {
            let start = rng.random_range(0..200) as f64;
            let len = rng.random_range(1..60) as f64;
            entries.push((j, Running, start));
            entries.push((j, RunDone, start + len));
            raw.push((start, start + len));
        }
        let ev = log(&entries);
        let w = Window::new(secs(0.0), secs(300.0));
        let cap = 10.0;
        let u = utilization_timeline(&ev, &[(secs(0.0), cap)], w);
        let mut sampled = 0.0;
        for s in 0..300 {
            let t = s as f64;
            sampled += raw.iter().filter(|(a, b)| *a <= t && t < *b).count() as f64;
        }
        let oracle = sampled / (300.0 * cap);
        assert!((u.time_average - oracle).abs() < 1e-9, "{} vs {}", u.time_average, oracle);
        assert!((time_average_running(&run_intervals(&ev), w) / cap - oracle).abs() < 1e-9);
    }
}
