use serde::{Deserialize, Serialize};

use super::{by_job, Summary};
use crate::exec::{map_ordered, ExecMode};
use crate::ids::JobId;
use crate::job::EventRecord;
use crate::state::JobState;
use crate::time::Timestamp;

/// Stage durations of one completed job, in microseconds.
///
/// The five anchor timestamps telescope, so
/// `overhead == stage_in + run_delay + stage_out` and
/// `time_to_solution == overhead + run` hold exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageDurations {
    pub job_id: JobId,
    pub stage_in: i64,
    pub run_delay: i64,
    pub run: i64,
    pub stage_out: i64,
    pub time_to_solution: i64,
    pub overhead: i64,
}

impl StageDurations {
    /// Durations from the first READY, first STAGED_IN, last RUNNING, last
    /// RUN_DONE and FINISHED timestamps. `None` when any anchor is missing.
    pub fn from_events(job_id: JobId, events: &[&EventRecord]) -> Option<StageDurations> {
        let first = |s: JobState| events.iter().find(|e| e.to_state == s).map(|e| e.timestamp);
        let last = |s: JobState| events.iter().rev().find(|e| e.to_state == s).map(|e| e.timestamp);
        let ready = first(JobState::Ready)?;
        let staged = first(JobState::StagedIn)?;
        let running = last(JobState::Running)?;
        let done = last(JobState::RunDone)?;
        let finished = first(JobState::Finished)?;
        Some(Self::from_anchors(job_id, [ready, staged, running, done, finished]))
    }

    pub fn from_anchors(job_id: JobId, [ready, staged, running, done, finished]: [Timestamp; 5]) -> StageDurations {
        let stage_in = staged - ready;
        let run_delay = running - staged;
        let run = done - running;
        let stage_out = finished - done;
        let overhead = stage_in + run_delay + stage_out;
        StageDurations { job_id, stage_in, run_delay, run, stage_out, time_to_solution: finished - ready, overhead }
    }

    pub fn secs(&self) -> [f64; 6] {
        [self.stage_in, self.run_delay, self.run, self.stage_out, self.time_to_solution, self.overhead]
            .map(|us| us as f64 / 1e6)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage_in: Summary,
    pub run_delay: Summary,
    pub run: Summary,
    pub stage_out: Summary,
    pub time_to_solution: Summary,
    pub overhead: Summary,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LatencyReport {
    pub jobs: Vec<StageDurations>,
    /// Jobs present in the log that never finished.
    pub incomplete: usize,
    pub summary: StageSummary,
}

pub fn latency_decomposition(events: &[EventRecord], mode: ExecMode) -> LatencyReport {
    let groups = by_job(events);
    let per_job: Vec<Option<StageDurations>> =
        map_ordered(mode, &groups, |(id, evs)| StageDurations::from_events(*id, evs));
    let incomplete = per_job.iter().filter(|d| d.is_none()).count();
    let jobs: Vec<StageDurations> = per_job.into_iter().flatten().collect();
    let column = |i: usize| -> Vec<f64> { jobs.iter().map(|d| d.secs()[i]).collect() };
    let summary = StageSummary {
        stage_in: Summary::of(&column(0)),
        run_delay: Summary::of(&column(1)),
        run: Summary::of(&column(2)),
        stage_out: Summary::of(&column(3)),
        time_to_solution: Summary::of(&column(4)),
        overhead: Summary::of(&column(5)),
    };
    LatencyReport { jobs, incomplete, summary }
}
