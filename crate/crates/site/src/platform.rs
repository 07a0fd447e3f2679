//! Facility-facing interfaces. The simulator and the local adapters
//! implement these; the agent modules and the launcher only see the traits.

use std::collections::BTreeMap;

use conduit_core::{Direction, JobId, JobMode, Timestamp, TransferItemRecord};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlatformError {
    /// Transient; the caller retries with backoff.
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    /// Permanent refusal of this request.
    #[error("request rejected: {0}")]
    Rejected(String),
}

/// Parameters of one allocation request to the local batch scheduler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitRequest {
    pub batchjob_id: conduit_core::BatchJobId,
    pub num_nodes: u32,
    /// Minutes.
    pub wall_time: u32,
    pub queue: String,
    pub project: String,
    pub job_mode: JobMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SchedulerState {
    Queued,
    Running,
    Finished,
    Failed,
}

/// An idle gap in the scheduler's plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackfillWindow {
    pub nodes: u32,
    pub minutes: u32,
}

pub trait SchedulerInterface {
    fn submit(&mut self, req: &SubmitRequest) -> Result<String, PlatformError>;
    /// States of the jobs the scheduler still knows about. Jobs that left
    /// the scheduler are reported as finished or failed, or omitted.
    fn poll(&mut self) -> Result<BTreeMap<String, SchedulerState>, PlatformError>;
    fn delete(&mut self, scheduler_id: &str) -> Result<(), PlatformError>;
    fn backfill_windows(&mut self) -> Result<Vec<BackfillWindow>, PlatformError>;
}

/// One transfer task: every item shares the remote endpoint and direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferTask {
    pub remote_endpoint: String,
    pub direction: Direction,
    pub items: Vec<TransferItemRecord>,
}

impl TransferTask {
    pub fn total_bytes(&self) -> u64 {
        self.items.iter().map(|i| i.bytes).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransferTaskState {
    Active,
    Done,
    Failed,
}

pub trait TransferInterface {
    fn submit_task(&mut self, task: &TransferTask) -> Result<String, PlatformError>;
    fn poll_task(&mut self, task_ref: &str) -> Result<TransferTaskState, PlatformError>;
}

/// Everything needed to start one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpawnSpec {
    pub job_id: JobId,
    pub app_name: String,
    pub command: String,
    pub workdir: String,
    pub env: BTreeMap<String, String>,
    pub node_ids: Vec<u32>,
    pub ranks_per_node: u32,
    pub threads_per_rank: u32,
    pub job_mode: JobMode,
    /// When the task actually starts. Equal to the current time unless the
    /// launcher staggers a burst of spawns.
    pub start_at: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunStatus {
    Running,
    /// `at` is the exit time when the backend knows it precisely.
    Exited { code: i32, at: Option<Timestamp> },
}

pub trait AppRunInterface {
    fn spawn(&mut self, spec: &SpawnSpec) -> Result<u64, PlatformError>;
    fn poll(&mut self, handle: u64) -> RunStatus;
    fn terminate(&mut self, handle: u64);
}
