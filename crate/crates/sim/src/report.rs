//! Post-run bookkeeping and the metrics a run reports.

use std::collections::{BTreeMap, BTreeSet};

use conduit_core::metrics::{
    latency_decomposition, littles_law_check, trimmed_window, utilization_timeline, LittleReport, StageSummary,
    Window,
};
use conduit_core::{EventRecord, ExecMode, JobId, JobRecord, JobState, SiteId, Timestamp};
use serde::{Deserialize, Serialize};

use crate::scenario::Scenario;
use crate::world::ORIGIN;

/// Raw facts the world collects while it runs.
#[derive(Debug, Clone, Default)]
pub struct RunRecord {
    pub site_names: Vec<String>,
    pub site_ids: Vec<SiteId>,
    pub submitted: usize,
    pub submitted_per_site: BTreeMap<usize, usize>,
    pub first_submission: Option<Timestamp>,
    pub last_submission: Option<Timestamp>,
    pub drained_at: Option<Timestamp>,
    pub end: Timestamp,
    pub kills: usize,
    pub killed_jobs: Vec<JobId>,
    /// Provisioned nodes per site as `(time, nodes)` change points.
    pub capacity: BTreeMap<usize, Vec<(Timestamp, f64)>>,
    pub allocations: usize,
    pub double_launches: usize,
    pub accounting_violations: usize,
    pub live_handles_at_end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteMetrics {
    pub name: String,
    pub submitted: usize,
    pub finished: usize,
    pub failed: usize,
    /// FINISHED per minute over the run's makespan.
    pub throughput_per_min: f64,
    /// Time-averaged running tasks over provisioned nodes, trimmed window.
    pub utilization: f64,
    pub little: Option<LittleReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    pub scenario: String,
    pub seed: u64,
    pub submitted: usize,
    pub finished: usize,
    pub failed: usize,
    pub unfinished: usize,
    pub drained: bool,
    pub end_secs: f64,
    /// First submission to last FINISHED.
    pub makespan_secs: f64,
    pub allocations: usize,
    pub kills: usize,
    pub killed_jobs: usize,
    /// Killed jobs whose history shows a timeout, a restart and a new run.
    pub killed_jobs_recovered: usize,
    pub double_launches: usize,
    pub accounting_violations: usize,
    pub latency: StageSummary,
    pub latency_incomplete: usize,
    pub sites: Vec<SiteMetrics>,
}

/// Events of the jobs placed at `site`.
pub fn site_events(events: &[EventRecord], jobs: &[JobRecord], site: SiteId) -> Vec<EventRecord> {
    let ids: BTreeSet<JobId> = jobs.iter().filter(|j| j.site_id == site).map(|j| j.job_id).collect();
    events.iter().filter(|e| ids.contains(&e.job_id)).cloned().collect()
}

/// Jobs that reached FINISHED no later than `t`.
pub fn finished_by(events: &[EventRecord], t: Timestamp) -> usize {
    events.iter().filter(|e| e.to_state == JobState::Finished && e.timestamp <= t).count()
}

/// STAGED_IN arrivals per minute, measured from the first READY to the last
/// STAGED_IN. This is the rate at which work becomes runnable at a site.
pub fn staged_in_rate_per_min(events: &[EventRecord]) -> f64 {
    let first = events.iter().filter(|e| e.to_state == JobState::Ready).map(|e| e.timestamp).min();
    let staged: Vec<Timestamp> = events.iter().filter(|e| e.to_state == JobState::StagedIn).map(|e| e.timestamp).collect();
    match (first, staged.iter().max()) {
        (Some(a), Some(&b)) if b > a => staged.len() as f64 * 60.0 / b.secs_since(a),
        _ => 0.0,
    }
}

/// Seconds from the first RUNNING to the last RUN_DONE.
pub fn run_span_secs(events: &[EventRecord]) -> f64 {
    let first = events.iter().filter(|e| e.to_state == JobState::Running).map(|e| e.timestamp).min();
    let last = events.iter().filter(|e| e.to_state == JobState::RunDone).map(|e| e.timestamp).max();
    match (first, last) {
        (Some(a), Some(b)) => b.secs_since(a),
        _ => 0.0,
    }
}

/// True when `history` contains a lease timeout followed by a restart and
/// another run.
pub fn recovered_after_timeout(history: &[&EventRecord]) -> bool {
    let mut stage = 0;
    for e in history {
        stage = match (stage, e.to_state) {
            (0, JobState::RunTimeout) => 1,
            (1, JobState::RestartReady) => 2,
            (2, JobState::Running) => 3,
            (s, _) => s,
        };
    }
    stage == 3
}

pub fn build_metrics(sc: &Scenario, rec: &RunRecord, events: &[EventRecord], jobs: &[JobRecord]) -> SimMetrics {
    let count = |st: JobState| jobs.iter().filter(|j| j.state == st).count();
    let finished = count(JobState::Finished);
    let failed = count(JobState::Failed);
    let last_finish = events.iter().filter(|e| e.to_state == JobState::Finished).map(|e| e.timestamp).max();
    let makespan = match (rec.first_submission, last_finish) {
        (Some(a), Some(b)) => b.secs_since(a),
        _ => 0.0,
    };

    let killed: BTreeSet<JobId> = rec.killed_jobs.iter().copied().collect();
    let mut histories: BTreeMap<JobId, Vec<&EventRecord>> = BTreeMap::new();
    for e in events.iter().filter(|e| killed.contains(&e.job_id)) {
        histories.entry(e.job_id).or_default().push(e);
    }
    let recovered = histories.values().filter(|h| recovered_after_timeout(h)).count();

    let latency = latency_decomposition(events, ExecMode::default());
    let mut sites = Vec::new();
    for (i, name) in rec.site_names.iter().enumerate() {
        let sid = rec.site_ids.get(i).copied().unwrap_or_default();
        let evs = site_events(events, jobs, sid);
        let site_jobs = || jobs.iter().filter(|j| j.site_id == sid);
        let fin = site_jobs().filter(|j| j.state == JobState::Finished).count();
        let utilization = match (Window::spanning(&evs), rec.capacity.get(&i)) {
            (Some(w), Some(cap)) => utilization_timeline(&evs, cap, trimmed_window(w, 0.1)).time_average,
            _ => 0.0,
        };
        sites.push(SiteMetrics {
            name: name.clone(),
            submitted: rec.submitted_per_site.get(&i).copied().unwrap_or(0),
            finished: fin,
            failed: site_jobs().filter(|j| j.state == JobState::Failed).count(),
            throughput_per_min: if makespan > 0.0 { fin as f64 * 60.0 / makespan } else { 0.0 },
            utilization,
            little: Window::spanning(&evs).and_then(|w| littles_law_check(&evs, w).ok()),
        });
    }

    SimMetrics {
        scenario: sc.name.clone(),
        seed: sc.seed,
        submitted: rec.submitted,
        finished,
        failed,
        unfinished: jobs.len() - finished - failed,
        drained: rec.drained_at.is_some(),
        end_secs: rec.end.secs_since(ORIGIN),
        makespan_secs: makespan,
        allocations: rec.allocations,
        kills: rec.kills,
        killed_jobs: killed.len(),
        killed_jobs_recovered: recovered,
        double_launches: rec.double_launches,
        accounting_violations: rec.accounting_violations,
        latency: latency.summary,
        latency_incomplete: latency.incomplete,
        sites,
    }
}
