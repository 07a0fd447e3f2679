//! Elastic queue: requests new allocations when runnable work exceeds the
//! nodes already provisioned or on order.

use std::sync::Arc;

use conduit_core::{BatchJobState, JobState, SiteId, Timestamp};
use conduit_service::{Api, BatchJobFilter, CreateBatchJob, JobFilter, JobQuery};
use serde::{Deserialize, Serialize};

use crate::config::ElasticQueueConfig;
use crate::platform::{BackfillWindow, SchedulerInterface};
use crate::ModuleError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocationRequest {
    pub num_nodes: u32,
    /// Minutes.
    pub wall_time: u32,
}

/// Sizing rule for one new allocation.
///
/// `queued` counts allocations not yet running. With backfill enabled, only
/// windows at least `min_walltime` long and `min_nodes` wide qualify and the
/// widest one wins; the request is shrunk to fit inside it.
pub fn elastic_scale_decision(
    runnable_footprint: u32,
    current_footprint: u32,
    queued: u32,
    cfg: &ElasticQueueConfig,
    windows: Option<&[BackfillWindow]>,
) -> Option<AllocationRequest> {
    if runnable_footprint <= current_footprint || queued >= cfg.max_queued_batchjobs {
        return None;
    }
    let mut nodes = (runnable_footprint - current_footprint).clamp(cfg.min_nodes, cfg.max_nodes);
    if let Some(total) = cfg.max_total_nodes {
        nodes = nodes.min(total.saturating_sub(current_footprint));
        if nodes < cfg.min_nodes {
            return None;
        }
    }
    if !cfg.use_backfill {
        return Some(AllocationRequest { num_nodes: nodes, wall_time: cfg.max_walltime });
    }
    let best = windows?
        .iter()
        .filter(|w| w.minutes >= cfg.min_walltime && w.nodes >= cfg.min_nodes)
        .max_by_key(|w| (w.nodes, w.minutes))?;
    Some(AllocationRequest { num_nodes: nodes.min(best.nodes), wall_time: best.minutes.min(cfg.max_walltime) })
}

pub struct ElasticQueueModule {
    api: Arc<dyn Api>,
    site: SiteId,
    cfg: ElasticQueueConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ElasticTickReport {
    pub runnable_footprint: u32,
    pub current_footprint: u32,
    pub requested: Option<AllocationRequest>,
}

impl ElasticQueueModule {
    pub fn new(api: Arc<dyn Api>, site: SiteId, cfg: ElasticQueueConfig) -> Self {
        ElasticQueueModule { api, site, cfg }
    }

    pub fn runnable_footprint(&self) -> Result<u32, ModuleError> {
        let mut states = vec![JobState::StagedIn, JobState::RestartReady];
        if self.cfg.count_staging_as_runnable {
            states.push(JobState::Ready);
        }
        let jobs = self.api.query_jobs(&JobQuery {
            filter: JobFilter { site_id: Some(self.site), states, ..Default::default() },
            ..Default::default()
        })?;
        let total: f64 = jobs.iter().filter(|j| j.session_id.is_none()).map(|j| j.resources.node_footprint()).sum();
        Ok(total.ceil() as u32)
    }

    /// One pass. `scheduler` supplies backfill windows when enabled.
    pub fn tick(
        &mut self,
        _now: Timestamp,
        scheduler: Option<&mut dyn SchedulerInterface>,
    ) -> Result<ElasticTickReport, ModuleError> {
        let runnable = self.runnable_footprint()?;
        let live = self.api.list_batchjobs(&BatchJobFilter {
            site_id: Some(self.site),
            states: vec![BatchJobState::PendingSubmission, BatchJobState::Queued, BatchJobState::Running],
        })?;
        let current: u32 = live.iter().map(|b| b.num_nodes).sum();
        let queued = live.iter().filter(|b| b.state != BatchJobState::Running).count() as u32;
        let windows = match (self.cfg.use_backfill, scheduler) {
            (true, Some(s)) => s.backfill_windows().ok(),
            _ => None,
        };
        let requested = elastic_scale_decision(runnable, current, queued, &self.cfg, windows.as_deref());
        if let Some(r) = requested {
            self.api.create_batchjob(&CreateBatchJob {
                site_id: self.site,
                num_nodes: r.num_nodes,
                wall_time: r.wall_time,
                queue: self.cfg.queue.clone(),
                project: self.cfg.project.clone(),
                job_mode: self.cfg.job_mode,
            })?;
        }
        Ok(ElasticTickReport { runnable_footprint: runnable, current_footprint: current, requested })
    }
}
