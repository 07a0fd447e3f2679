//! The site agent: runs the transfer, scheduler and elastic-queue modules
//! against one site at a fixed cadence.
//!
//! Modules keep no state that the service does not also hold, so a failed
//! pass is logged and simply retried on the next one.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use conduit_core::{Clock, SiteId, Timestamp};
use conduit_service::{Api, RegisterSite};

use crate::elastic::{ElasticQueueModule, ElasticTickReport};
use crate::platform::{SchedulerInterface, TransferInterface};
use crate::scheduler::{SchedulerModule, SchedulerTickReport};
use crate::transfer::{TransferModule, TransferTickReport};
use crate::ModuleError;

/// Finds the site registered for `hostname` and `path`, creating it if absent.
pub fn ensure_site(api: &dyn Api, hostname: &str, path: &str) -> Result<SiteId, ModuleError> {
    if let Some(s) = api.list_sites()?.into_iter().find(|s| s.hostname == hostname && s.path == path) {
        return Ok(s.site_id);
    }
    Ok(api.register_site(&RegisterSite { hostname: hostname.into(), path: path.into() })?.site_id)
}

#[derive(Debug, Clone, Default)]
pub struct AgentTickReport {
    pub transfer: Option<TransferTickReport>,
    pub scheduler: Option<SchedulerTickReport>,
    pub elastic: Option<ElasticTickReport>,
    pub errors: Vec<String>,
}

pub struct SiteAgent<S: SchedulerInterface, T: TransferInterface> {
    pub site_id: SiteId,
    transfer: TransferModule<T>,
    scheduler: SchedulerModule<S>,
    elastic: Option<ElasticQueueModule>,
    interval: f64,
}

impl<S: SchedulerInterface, T: TransferInterface> SiteAgent<S, T> {
    pub fn new(
        site_id: SiteId,
        transfer: TransferModule<T>,
        scheduler: SchedulerModule<S>,
        elastic: Option<ElasticQueueModule>,
        interval: f64,
    ) -> Self {
        SiteAgent { site_id, transfer, scheduler, elastic, interval }
    }

    pub fn interval(&self) -> f64 {
        self.interval
    }

    pub fn scheduler(&mut self) -> &mut S {
        self.scheduler.interface()
    }

    pub fn transfer(&mut self) -> &mut T {
        self.transfer.interface()
    }

    /// One pass of every module. The elastic queue runs between two
    /// scheduler passes so its new allocations are submitted right away.
    pub fn tick(&mut self, now: Timestamp) -> AgentTickReport {
        let mut report = AgentTickReport::default();
        match self.transfer.tick(now) {
            Ok(r) => report.transfer = Some(r),
            Err(e) => report.errors.push(format!("transfer: {e}")),
        }
        match self.scheduler.tick(now) {
            Ok(r) => report.scheduler = Some(r),
            Err(e) => report.errors.push(format!("scheduler: {e}")),
        }
        if let Some(elastic) = self.elastic.as_mut() {
            match elastic.tick(now, Some(self.scheduler.interface())) {
                Ok(r) => {
                    if r.requested.is_some() {
                        if let Err(e) = self.scheduler.tick(now) {
                            report.errors.push(format!("scheduler: {e}"));
                        }
                    }
                    report.elastic = Some(r);
                }
                Err(e) => report.errors.push(format!("elastic queue: {e}")),
            }
        }
        for e in &report.errors {
            log::warn!("site {}: {e}", self.site_id);
        }
        report
    }

    /// Ticks on the wall clock until `stop` is set.
    pub fn run(&mut self, clock: &dyn Clock, stop: &AtomicBool) {
        while !stop.load(Ordering::Relaxed) {
            self.tick(clock.now());
            let mut left = self.interval;
            while left > 0.0 && !stop.load(Ordering::Relaxed) {
                let step = left.min(0.2);
                std::thread::sleep(Duration::from_secs_f64(step));
                left -= step;
            }
        }
    }
}

/// Shared handle for stopping an agent loop from a signal handler.
pub fn stop_flag() -> Arc<AtomicBool> {
    Arc::new(AtomicBool::new(false))
}
