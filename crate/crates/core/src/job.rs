use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::ids::{AppId, EventId, JobId, SessionId, SiteId};
use crate::state::{validate_transition, JobState};
use crate::time::Timestamp;

fn one() -> u32 {
    1
}

/// Per-task resource requirements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceSpec {
    #[serde(default = "one")]
    pub num_nodes: u32,
    #[serde(default = "one")]
    pub ranks_per_node: u32,
    #[serde(default = "one")]
    pub threads_per_rank: u32,
    #[serde(default)]
    pub gpus_per_rank: f64,
    /// Maximum number of co-resident tasks on one node.
    #[serde(default = "one")]
    pub node_packing_count: u32,
    /// Seconds; 0 means unlimited.
    #[serde(default)]
    pub wall_time_limit: u32,
}

impl Default for ResourceSpec {
    fn default() -> Self {
        ResourceSpec {
            num_nodes: 1,
            ranks_per_node: 1,
            threads_per_rank: 1,
            gpus_per_rank: 0.0,
            node_packing_count: 1,
            wall_time_limit: 0,
        }
    }
}

impl ResourceSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidResources(m.to_string()));
        if self.num_nodes == 0 || self.ranks_per_node == 0 || self.threads_per_rank == 0 {
            return bad("num_nodes, ranks_per_node and threads_per_rank must be >= 1");
        }
        if self.node_packing_count == 0 {
            return bad("node_packing_count must be >= 1");
        }
        if !(self.gpus_per_rank >= 0.0) {
            return bad("gpus_per_rank must be >= 0");
        }
        if self.node_packing_count > 1 && self.num_nodes != 1 {
            return bad("node packing is only allowed for single-node jobs");
        }
        Ok(())
    }

    pub fn cores_per_node(&self) -> u32 {
        self.ranks_per_node * self.threads_per_rank
    }

    pub fn gpus_per_node(&self) -> f64 {
        self.ranks_per_node as f64 * self.gpus_per_rank
    }

    /// Whether the job needs whole nodes to itself.
    pub fn is_exclusive(&self) -> bool {
        self.num_nodes > 1 || self.node_packing_count == 1
    }

    /// Fractional node footprint used for elastic sizing.
    pub fn node_footprint(&self) -> f64 {
        if self.is_exclusive() {
            self.num_nodes as f64
        } else {
            1.0 / self.node_packing_count as f64
        }
    }
}

pub type EventData = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub event_id: EventId,
    pub job_id: JobId,
    pub from_state: JobState,
    pub to_state: JobState,
    pub timestamp: Timestamp,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub data: EventData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: JobId,
    pub app_id: AppId,
    pub site_id: SiteId,
    pub workdir: String,
    #[serde(default)]
    pub parameters: BTreeMap<String, String>,
    #[serde(default)]
    pub resources: ResourceSpec,
    #[serde(default)]
    pub tags: BTreeMap<String, String>,
    #[serde(default)]
    pub parent_ids: Vec<JobId>,
    pub state: JobState,
    #[serde(default)]
    pub retry_count: u32,
    #[serde(default)]
    pub transfer_bindings: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<SessionId>,
    /// Timestamp of the most recent event; `None` before the first one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_event_at: Option<Timestamp>,
}

impl JobRecord {
    pub fn new(job_id: JobId, app_id: AppId, site_id: SiteId, workdir: impl Into<String>) -> Self {
        JobRecord {
            job_id,
            app_id,
            site_id,
            workdir: workdir.into(),
            parameters: BTreeMap::new(),
            resources: ResourceSpec::default(),
            tags: BTreeMap::new(),
            parent_ids: Vec::new(),
            state: JobState::Created,
            retry_count: 0,
            transfer_bindings: BTreeMap::new(),
            session_id: None,
            last_event_at: None,
        }
    }
}

/// A job as submitted by a client, before the service assigns an id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct JobDraft {
    pub app_id: AppId,
    #[serde(default)]
    pub workdir: String,
    #[serde(default)]
    pub parameters: BTreeMap<String, String>,
    #[serde(default)]
    pub resources: ResourceSpec,
    #[serde(default)]
    pub tags: BTreeMap<String, String>,
    /// Parents that already exist.
    #[serde(default)]
    pub parent_ids: Vec<JobId>,
    /// Parents created in the same bulk request, by index into the request.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub parent_drafts: Vec<usize>,
    #[serde(default)]
    pub transfer_bindings: BTreeMap<String, String>,
    /// Optional size hints per slot, carried onto the transfer items.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub transfer_bytes: BTreeMap<String, u64>,
}

/// READY once every parent finished, FAILED as soon as one failed.
pub fn readiness_state(parent_states: &[JobState]) -> JobState {
    if parent_states.contains(&JobState::Failed) {
        JobState::Failed
    } else if parent_states.iter().all(|&s| s == JobState::Finished) {
        JobState::Ready
    } else {
        JobState::AwaitingParents
    }
}

/// Moves `job` to `to` and returns the event describing the move. The
/// returned event carries a zero id; the store numbers events as it persists
/// them.
pub fn apply_event(
    job: &mut JobRecord,
    to: JobState,
    timestamp: Timestamp,
    data: EventData,
) -> Result<EventRecord, ModelError> {
    if !validate_transition(job.state, to) {
        return Err(ModelError::InvalidTransition { from: job.state, to });
    }
    if let Some(last) = job.last_event_at {
        if timestamp < last {
            return Err(ModelError::NonMonotonicTimestamp { last: last.0, got: timestamp.0 });
        }
    }
    let event = EventRecord {
        event_id: EventId::default(),
        job_id: job.job_id,
        from_state: job.state,
        to_state: to,
        timestamp,
        data,
    };
    job.state = to;
    job.last_event_at = Some(timestamp);
    Ok(event)
}
