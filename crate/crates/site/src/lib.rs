//! Site-side components: the agent modules that bridge the central service to
//! one facility, and the pilot-job launcher that runs inside allocations.

pub mod agent;
pub mod config;
pub mod elastic;
pub mod launcher;
pub mod local;
pub mod platform;
pub mod scheduler;
pub mod transfer;

use conduit_core::Timestamp;
use conduit_service::ApiError;
use thiserror::Error;

pub use agent::{AgentTickReport, SiteAgent};
pub use config::{ElasticQueueConfig, LauncherSettings, QueuePolicy, SiteConfig, TransferConfig};
pub use elastic::{elastic_scale_decision, AllocationRequest, ElasticQueueModule};
pub use launcher::{ExitReason, Launcher, LauncherConfig, LauncherStats, LauncherStatus};
pub use platform::{
    AppRunInterface, BackfillWindow, PlatformError, RunStatus, SchedulerInterface, SchedulerState, SpawnSpec,
    SubmitRequest, TransferInterface, TransferTask, TransferTaskState,
};
pub use scheduler::SchedulerModule;
pub use transfer::{plan_transfer_batches, TransferModule};

#[derive(Debug, Error)]
pub enum ModuleError {
    #[error(transparent)]
    Api(#[from] ApiError),
    #[error(transparent)]
    Platform(#[from] PlatformError),
}

/// Exponential backoff after transient platform failures.
#[derive(Debug, Clone, PartialEq)]
pub struct Backoff {
    pub initial: f64,
    pub cap: f64,
    delay: f64,
    until: Option<Timestamp>,
}

impl Default for Backoff {
    fn default() -> Self {
        Backoff { initial: 5.0, cap: 300.0, delay: 0.0, until: None }
    }
}

impl Backoff {
    pub fn ready(&self, now: Timestamp) -> bool {
        self.until.is_none_or(|t| now >= t)
    }

    /// Rejections are permanent and do not delay the next attempt.
    pub fn fail(&mut self, now: Timestamp, err: &PlatformError) {
        if let PlatformError::Unavailable(_) = err {
            self.delay = if self.delay == 0.0 { self.initial } else { (self.delay * 2.0).min(self.cap) };
            self.until = Some(now.plus_secs(self.delay));
        }
    }

    pub fn succeed(&mut self) {
        self.delay = 0.0;
        self.until = None;
    }

    pub fn current_delay(&self) -> f64 {
        self.delay
    }
}
