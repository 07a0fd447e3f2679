//! Mutating operations as data, so they can be logged and replayed.

use conduit_core::{
    AppId, AppSpec, BatchJobRecord, JobDraft, JobRecord, SessionId, SessionRecord, SiteId, SiteRecord, Timestamp,
    UserId, UserRecord,
};
use serde::{Deserialize, Serialize};

use crate::types::{
    AcquireRequest, CreateBatchJob, CreateSession, ExpiryReport, JobUpdate, PatchBatchJob, RegisterSite,
    TransferUpdate, TransferUpdateResult, UpdateOutcome,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Command {
    RegisterUser { username: String, credential: String },
    RegisterSite { user: UserId, req: RegisterSite },
    SyncApps { user: UserId, site_id: SiteId, apps: Vec<AppSpec> },
    CreateJobs { user: UserId, drafts: Vec<JobDraft> },
    UpdateJobs { user: UserId, updates: Vec<JobUpdate> },
    UpdateTransfers { user: UserId, updates: Vec<TransferUpdate> },
    CreateSession { user: UserId, req: CreateSession },
    Acquire { user: UserId, session_id: SessionId, req: AcquireRequest },
    Heartbeat { user: UserId, session_id: SessionId },
    DeleteSession { user: UserId, session_id: SessionId },
    ExpireSessions,
    CreateBatchJob { user: UserId, req: CreateBatchJob },
    PatchBatchJob { user: UserId, req: PatchBatchJob },
}

/// One durable log entry: the command and the service time it ran at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub now: Timestamp,
    #[serde(flatten)]
    pub cmd: Command,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Reply {
    User(UserRecord),
    Site(SiteRecord),
    AppIds(Vec<AppId>),
    Jobs(Vec<JobRecord>),
    Updated(UpdateOutcome),
    Transfers(TransferUpdateResult),
    Session(SessionRecord),
    Heartbeat(Timestamp),
    Expiry(ExpiryReport),
    BatchJob(BatchJobRecord),
}
