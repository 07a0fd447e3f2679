//! Request and response bodies shared by every transport.

use std::collections::BTreeMap;

use conduit_core::{
    AppId, BatchJobId, BatchJobRecord, BatchJobState, Direction, EventData, EventRecord, JobId, JobMode, JobRecord,
    JobState, NodeResource, SessionId, SiteId, Timestamp, TransferItemState, UserId,
};
use serde::{Deserialize, Serialize};

use crate::error::ErrorKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoginRequest {
    pub username: String,
    pub password: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessToken {
    pub access_token: String,
    pub token_type: String,
    pub user_id: UserId,
    pub expires_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegisterSite {
    pub hostname: String,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppSyncResult {
    pub app_ids: Vec<AppId>,
}

/// Job selection. Empty vectors and `None` match everything.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct JobFilter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub site_id: Option<SiteId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub states: Vec<JobState>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tags: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub job_ids: Vec<JobId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub app_id: Option<AppId>,
}

impl JobFilter {
    pub fn matches(&self, job: &JobRecord) -> bool {
        self.site_id.is_none_or(|s| s == job.site_id)
            && self.app_id.is_none_or(|a| a == job.app_id)
            && (self.states.is_empty() || self.states.contains(&job.state))
            && (self.job_ids.is_empty() || self.job_ids.contains(&job.job_id))
            && self.tags.iter().all(|(k, v)| job.tags.get(k) == Some(v))
    }
}

/// Sort key for job listings. Descending variants are spelled with a
/// leading `-` on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Ordering {
    #[default]
    JobId,
    JobIdDesc,
    LastUpdate,
    LastUpdateDesc,
}

impl std::str::FromStr for Ordering {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "id" | "job_id" => Ok(Ordering::JobId),
            "-id" | "-job_id" => Ok(Ordering::JobIdDesc),
            "last_update" => Ok(Ordering::LastUpdate),
            "-last_update" => Ok(Ordering::LastUpdateDesc),
            _ => Err(format!("unknown ordering `{s}`")),
        }
    }
}

impl Ordering {
    pub fn as_str(self) -> &'static str {
        match self {
            Ordering::JobId => "job_id",
            Ordering::JobIdDesc => "-job_id",
            Ordering::LastUpdate => "last_update",
            Ordering::LastUpdateDesc => "-last_update",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Page {
    pub limit: usize,
    pub offset: usize,
}

impl Default for Page {
    fn default() -> Self {
        Page { limit: usize::MAX, offset: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct JobQuery {
    #[serde(default)]
    pub filter: JobFilter,
    #[serde(default)]
    pub ordering: Ordering,
    #[serde(default)]
    pub page: Page,
}

/// One entry of a bulk job update. A state change and field edits may be
/// combined; either may be absent.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct JobUpdate {
    pub job_id: JobId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<JobState>,
    /// Event time; the service clock is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub data: EventData,
    /// When set, the job must currently be leased by this session.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<SessionId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tags: Option<BTreeMap<String, String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameters: Option<BTreeMap<String, String>>,
}

impl JobUpdate {
    pub fn transition(job_id: JobId, state: JobState) -> Self {
        JobUpdate { job_id, state: Some(state), ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemError {
    pub job_id: JobId,
    pub code: ErrorKind,
    pub message: String,
}

/// Result of a bulk update: the events produced by the accepted items,
/// including automatic follow-up transitions, and one error per rejected item.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateOutcome {
    pub events: Vec<EventRecord>,
    pub errors: Vec<ItemError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    pub site_id: SiteId,
    #[serde(default)]
    pub batchjob_id: Option<BatchJobId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquireRequest {
    pub max_num_jobs: usize,
    /// Free capacity of the caller's nodes.
    pub available: Vec<NodeResource>,
    /// Restricts acquisition to a subset of STAGED_IN and RESTART_READY.
    #[serde(default = "default_acquirable")]
    pub states: Vec<JobState>,
}

fn default_acquirable() -> Vec<JobState> {
    vec![JobState::StagedIn, JobState::RestartReady]
}

impl AcquireRequest {
    pub fn new(max_num_jobs: usize, available: Vec<NodeResource>) -> Self {
        AcquireRequest { max_num_jobs, available, states: default_acquirable() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExpiryReport {
    /// RUNNING jobs moved to RUN_TIMEOUT and then RESTART_READY.
    pub reset: Vec<JobId>,
    /// Acquired jobs that had not started and were returned to the pool.
    pub released: Vec<JobId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateBatchJob {
    pub site_id: SiteId,
    pub num_nodes: u32,
    /// Minutes.
    pub wall_time: u32,
    #[serde(default)]
    pub queue: String,
    #[serde(default)]
    pub project: String,
    #[serde(default)]
    pub job_mode: JobMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchBatchJob {
    pub batchjob_id: BatchJobId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<BatchJobState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheduler_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BatchJobFilter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub site_id: Option<SiteId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub states: Vec<BatchJobState>,
}

impl BatchJobFilter {
    pub fn matches(&self, b: &BatchJobRecord) -> bool {
        self.site_id.is_none_or(|s| s == b.site_id) && (self.states.is_empty() || self.states.contains(&b.state))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TransferFilter {
    pub site_id: SiteId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<TransferItemState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Direction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferUpdate {
    pub item_id: conduit_core::TransferItemId,
    pub state: TransferItemState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attempts: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TransferUpdateResult {
    pub updated: usize,
    /// Job transitions triggered by completed items.
    pub events: Vec<EventRecord>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BacklogSummary {
    pub site_id: SiteId,
    pub counts: BTreeMap<JobState, usize>,
    /// Jobs that are not yet running and not terminal.
    pub pending_total: usize,
    /// Jobs that could be acquired right now.
    pub runnable_total: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EventFilter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub site_id: Option<SiteId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub job_ids: Vec<JobId>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tags: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from_state: Option<JobState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to_state: Option<JobState>,
    /// Inclusive lower bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub begin: Option<Timestamp>,
    /// Exclusive upper bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<Timestamp>,
}

impl EventFilter {
    pub fn matches_event(&self, e: &EventRecord) -> bool {
        (self.job_ids.is_empty() || self.job_ids.contains(&e.job_id))
            && self.from_state.is_none_or(|s| s == e.from_state)
            && self.to_state.is_none_or(|s| s == e.to_state)
            && self.begin.is_none_or(|b| e.timestamp >= b)
            && self.end.is_none_or(|b| e.timestamp < b)
    }
}
