//! Shared domain model for the conduit workflow platform.
//!
//! Everything in this crate is a plain value type or a total function over
//! value types: the job state machine, command templating, transfer slot
//! resolution, node packing, and the offline metrics computed from event
//! logs. The service, site agent, launcher, simulator and client all build
//! on these definitions.

pub mod app;
pub mod error;
pub mod exec;
pub mod ids;
pub mod job;
pub mod metrics;
pub mod records;
pub mod resources;
pub mod state;
pub mod time;

pub use app::{render_command, resolve_transfer_slots, AppSpec, Direction, ParameterSpec, TransferSlot};
pub use error::ModelError;
pub use exec::ExecMode;
pub use ids::{AppId, BatchJobId, EventId, JobId, SessionId, SiteId, TransferItemId, UserId};
pub use job::{apply_event, readiness_state, EventData, EventRecord, JobDraft, JobRecord, ResourceSpec};
pub use records::{
    BatchJobRecord, BatchJobState, JobMode, SessionRecord, SiteRecord, TransferItemRecord,
    TransferItemState, UserRecord,
};
pub use resources::{pack_assignments, NodeResource, NodePool, TaskAssignment};
pub use state::{validate_transition, JobState};
pub use time::{Clock, ManualClock, SystemClock, Timestamp};
