use serde::{Deserialize, Serialize};

use super::{run_intervals, time_average_running, MetricsError, Window};
use crate::job::EventRecord;
use crate::state::JobState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LittleReport {
    /// Staged-in arrivals per second.
    pub lambda: f64,
    /// Mean run duration in seconds.
    pub w: f64,
    pub l_expected: f64,
    pub l_observed: f64,
    pub relative_gap: f64,
    pub window: Window,
}

/// `window` with `fraction` of its length cut from each end.
pub fn trimmed_window(window: Window, fraction: f64) -> Window {
    let cut = ((window.end - window.start) as f64 * fraction).round() as i64;
    Window::new(window.start + cut, window.end + (-cut))
}

/// Compares the arrival-rate × run-time product against the time-averaged
/// number of running tasks, over `window` with 10% trimmed from each end.
pub fn littles_law_check(events: &[EventRecord], window: Window) -> Result<LittleReport, MetricsError> {
    let w = trimmed_window(window, 0.1);
    let dur = w.duration_secs();
    if dur <= 0.0 {
        return Err(MetricsError::EmptyWindow("zero-length window".into()));
    }
    let arrivals = events.iter().filter(|e| e.to_state == JobState::StagedIn && w.contains(e.timestamp)).count();
    let intervals = run_intervals(events);
    let runs: Vec<f64> = intervals
        .iter()
        .filter(|r| r.outcome == Some(JobState::RunDone))
        .filter_map(|r| r.end.filter(|e| w.contains(*e)).map(|e| e.secs_since(r.start)))
        .collect();
    if arrivals == 0 || runs.is_empty() {
        return Err(MetricsError::EmptyWindow(format!("{arrivals} arrivals, {} completed runs", runs.len())));
    }
    let lambda = arrivals as f64 / dur;
    let mean_run = runs.iter().sum::<f64>() / runs.len() as f64;
    let l_observed = time_average_running(&intervals, w);
    if l_observed <= 0.0 {
        return Err(MetricsError::EmptyWindow("no running tasks".into()));
    }
    let l_expected = lambda * mean_run;
    Ok(LittleReport {
        lambda,
        w: mean_run,
        l_expected,
        l_observed,
        relative_gap: (l_expected - l_observed).abs() / l_observed,
        window: w,
    })
}
