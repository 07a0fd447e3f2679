use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::app::Direction;
use crate::ids::{BatchJobId, JobId, SessionId, SiteId, TransferItemId, UserId};
use crate::time::Timestamp;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: UserId,
    pub username: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteRecord {
    pub site_id: SiteId,
    pub owner: UserId,
    pub hostname: String,
    pub path: String,
    pub last_refresh: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TransferItemState {
    Pending,
    Active,
    Done,
    Error,
}

impl TransferItemState {
    pub fn can_move_to(self, to: TransferItemState) -> bool {
        use TransferItemState::*;
        matches!(
            (self, to),
            (Pending, Active) | (Pending, Done) | (Pending, Error) | (Active, Done) | (Active, Error) | (Active, Pending)
        )
    }
}

impl FromStr for TransferItemState {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "PENDING" => Ok(Self::Pending),
            "ACTIVE" => Ok(Self::Active),
            "DONE" => Ok(Self::Done),
            "ERROR" => Ok(Self::Error),
            _ => Err(format!("unknown transfer state `{s}`")),
        }
    }
}

/// Marker recorded as `task_ref` when a file was staged by a plain local copy.
pub const LOCAL_COPY_MARKER: &str = "local-copy";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferItemRecord {
    pub item_id: TransferItemId,
    pub job_id: JobId,
    pub slot: String,
    pub direction: Direction,
    pub local_path: String,
    /// `endpoint-id:path`
    pub remote_uri: String,
    pub state: TransferItemState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_ref: Option<String>,
    #[serde(default)]
    pub bytes: u64,
    #[serde(default)]
    pub attempts: u32,
}

impl TransferItemRecord {
    pub fn remote_endpoint(&self) -> &str {
        crate::app::remote_endpoint(&self.remote_uri)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JobMode {
    /// One launch per task.
    #[default]
    PerTaskSpawn,
    /// A persistent per-node worker executes a stream of tasks.
    NodeResident,
}

impl FromStr for JobMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per-task-spawn" | "mpi" => Ok(Self::PerTaskSpawn),
            "node-resident" | "serial" => Ok(Self::NodeResident),
            _ => Err(format!("unknown job mode `{s}`")),
        }
    }
}

impl fmt::Display for JobMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            JobMode::PerTaskSpawn => "per-task-spawn",
            JobMode::NodeResident => "node-resident",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BatchJobState {
    PendingSubmission,
    Queued,
    Running,
    Finished,
    Failed,
    PendingDeletion,
}

impl BatchJobState {
    pub fn can_move_to(self, to: BatchJobState) -> bool {
        use BatchJobState::*;
        matches!(
            (self, to),
            (PendingSubmission, Queued)
                | (PendingSubmission, Failed)
                | (PendingSubmission, PendingDeletion)
                | (Queued, Running)
                | (Queued, PendingDeletion)
                | (Running, Finished)
                | (Running, Failed)
                | (PendingDeletion, Finished)
        )
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, BatchJobState::Finished | BatchJobState::Failed)
    }

    /// States in which the local scheduler id must be known.
    pub fn requires_scheduler_id(self) -> bool {
        matches!(self, BatchJobState::Queued | BatchJobState::Running)
    }
}

impl FromStr for BatchJobState {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        use BatchJobState::*;
        match s.to_ascii_uppercase().as_str() {
            "PENDING_SUBMISSION" => Ok(PendingSubmission),
            "QUEUED" => Ok(Queued),
            "RUNNING" => Ok(Running),
            "FINISHED" => Ok(Finished),
            "FAILED" => Ok(Failed),
            "PENDING_DELETION" => Ok(PendingDeletion),
            _ => Err(format!("unknown batch job state `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchJobRecord {
    pub batchjob_id: BatchJobId,
    pub site_id: SiteId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheduler_id: Option<String>,
    pub num_nodes: u32,
    /// Minutes.
    pub wall_time: u32,
    pub queue: String,
    pub project: String,
    pub job_mode: JobMode,
    pub state: BatchJobState,
    /// When the allocation entered the local queue.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub queued_at: Option<Timestamp>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: SessionId,
    pub site_id: SiteId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batchjob_id: Option<BatchJobId>,
    pub heartbeat: Timestamp,
    #[serde(default)]
    pub acquired_job_ids: BTreeSet<JobId>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batchjob_transitions() {
        use BatchJobState::*;
        assert!(PendingSubmission.can_move_to(Queued));
        assert!(Queued.can_move_to(Running));
        assert!(Queued.can_move_to(PendingDeletion));
        assert!(!Running.can_move_to(PendingDeletion));
        assert!(!Finished.can_move_to(Running));
    }

    #[test]
    fn item_transitions() {
        use TransferItemState::*;
        assert!(Pending.can_move_to(Active));
        assert!(Active.can_move_to(Pending));
        assert!(!Done.can_move_to(Pending));
        assert!(!Error.can_move_to(Active));
    }

    #[test]
    fn job_mode_names() {
        assert_eq!("per-task-spawn".parse::<JobMode>().unwrap(), JobMode::PerTaskSpawn);
        assert_eq!(JobMode::NodeResident.to_string(), "node-resident");
        assert_eq!(serde_json::to_string(&JobMode::NodeResident).unwrap(), "\"node-resident\"");
    }
}
