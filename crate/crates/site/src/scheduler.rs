//! Scheduler module: mirrors service BatchJobs onto the local batch
//! scheduler and reports local queue states back.

use std::sync::Arc;

use conduit_core::{BatchJobRecord, BatchJobState, SiteId, Timestamp};
use conduit_service::{Api, BatchJobFilter, PatchBatchJob};

use crate::platform::{PlatformError, SchedulerInterface, SchedulerState, SubmitRequest};
use crate::{Backoff, ModuleError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SchedulerTickReport {
    pub submitted: usize,
    pub rejected: usize,
    pub started: usize,
    pub ended: usize,
    pub deleted: usize,
    pub withdrawn: usize,
}

pub struct SchedulerModule<S: SchedulerInterface> {
    api: Arc<dyn Api>,
    iface: S,
    site: SiteId,
    /// Seconds a QUEUED allocation may wait before it is withdrawn.
    max_queue_wait: Option<f64>,
    backoff: Backoff,
}

impl<S: SchedulerInterface> SchedulerModule<S> {
    pub fn new(api: Arc<dyn Api>, iface: S, site: SiteId, max_queue_wait: Option<f64>) -> Self {
        SchedulerModule { api, iface, site, max_queue_wait, backoff: Backoff::default() }
    }

    pub fn interface(&mut self) -> &mut S {
        &mut self.iface
    }

    fn patch(&self, b: &BatchJobRecord, state: BatchJobState, scheduler_id: Option<String>) -> Result<(), ModuleError> {
        self.api.patch_batchjob(&PatchBatchJob { batchjob_id: b.batchjob_id, state: Some(state), scheduler_id })?;
        Ok(())
    }

    pub fn tick(&mut self, now: Timestamp) -> Result<SchedulerTickReport, ModuleError> {
        let mut report = SchedulerTickReport::default();
        if !self.backoff.ready(now) {
            return Ok(report);
        }
        let live = self.api.list_batchjobs(&BatchJobFilter {
            site_id: Some(self.site),
            states: vec![
                BatchJobState::PendingSubmission,
                BatchJobState::Queued,
                BatchJobState::Running,
                BatchJobState::PendingDeletion,
            ],
        })?;
        for b in live.iter().filter(|b| b.state == BatchJobState::PendingSubmission) {
            let req = SubmitRequest {
                batchjob_id: b.batchjob_id,
                num_nodes: b.num_nodes,
                wall_time: b.wall_time,
                queue: b.queue.clone(),
                project: b.project.clone(),
                job_mode: b.job_mode,
            };
            match self.iface.submit(&req) {
                Ok(id) => {
                    self.patch(b, BatchJobState::Queued, Some(id))?;
                    report.submitted += 1;
                }
                Err(PlatformError::Rejected(why)) => {
                    log::warn!("batch job {} rejected by scheduler: {why}", b.batchjob_id);
                    self.patch(b, BatchJobState::Failed, None)?;
                    report.rejected += 1;
                }
                Err(e) => {
                    self.backoff.fail(now, &e);
                    return Ok(report);
                }
            }
        }
        for b in live.iter().filter(|b| b.state == BatchJobState::PendingDeletion) {
            if let Some(id) = &b.scheduler_id {
                if let Err(e) = self.iface.delete(id) {
                    self.backoff.fail(now, &e);
                    return Ok(report);
                }
            }
            self.patch(b, BatchJobState::Finished, None)?;
            report.deleted += 1;
        }
        let local = match self.iface.poll() {
            Ok(m) => m,
            Err(e) => {
                self.backoff.fail(now, &e);
                return Ok(report);
            }
        };
        for b in live.iter().filter(|b| matches!(b.state, BatchJobState::Queued | BatchJobState::Running)) {
            let Some(id) = &b.scheduler_id else { continue };
            let seen = local.get(id).copied().unwrap_or(SchedulerState::Finished);
            match (b.state, seen) {
                (BatchJobState::Queued, SchedulerState::Queued) => {
                    let waited = b.queued_at.map_or(0.0, |q| now.secs_since(q));
                    if self.max_queue_wait.is_some_and(|max| waited > max) {
                        if let Err(e) = self.iface.delete(id) {
                            self.backoff.fail(now, &e);
                            return Ok(report);
                        }
                        self.patch(b, BatchJobState::PendingDeletion, None)?;
                        self.api.patch_batchjob(&PatchBatchJob {
                            batchjob_id: b.batchjob_id,
                            state: Some(BatchJobState::Finished),
                            scheduler_id: None,
                        })?;
                        report.withdrawn += 1;
                    }
                }
                (BatchJobState::Queued, SchedulerState::Running) => {
                    self.patch(b, BatchJobState::Running, None)?;
                    report.started += 1;
                }
                (BatchJobState::Queued, end @ (SchedulerState::Finished | SchedulerState::Failed)) => {
                    // Started and ended between two polls.
                    self.patch(b, BatchJobState::Running, None)?;
                    let to = if end == SchedulerState::Failed { BatchJobState::Failed } else { BatchJobState::Finished };
                    self.patch(b, to, None)?;
                    report.started += 1;
                    report.ended += 1;
                }
                (BatchJobState::Running, SchedulerState::Finished) => {
                    self.patch(b, BatchJobState::Finished, None)?;
                    report.ended += 1;
                }
                (BatchJobState::Running, SchedulerState::Failed) => {
                    self.patch(b, BatchJobState::Failed, None)?;
                    report.ended += 1;
                }
                _ => {}
            }
        }
        self.backoff.succeed();
        Ok(report)
    }
}
