//! Transfer module: batches PENDING transfer items into tasks, submits them
//! through the [`TransferInterface`], and mirrors task outcomes back to the
//! service.

use std::collections::BTreeMap;
use std::sync::Arc;

use conduit_core::{Direction, SiteId, Timestamp, TransferItemRecord, TransferItemState};
use conduit_service::{Api, TransferFilter, TransferUpdate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::TransferConfig;
use crate::platform::{PlatformError, TransferInterface, TransferTask, TransferTaskState};
use crate::{Backoff, ModuleError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransferError {
    #[error("endpoint `{0}` is not trusted by this site")]
    UntrustedEndpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BatchState {
    Submitted,
    Active,
    Done,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferBatch {
    pub batch_id: u64,
    pub remote_endpoint: String,
    pub direction: Direction,
    pub items: Vec<TransferItemRecord>,
    pub task_ref: Option<String>,
    pub state: BatchState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferPlan {
    /// Every batch the pending items fall into, in submission order.
    pub batches: Vec<TransferBatch>,
    /// How many leading batches may be submitted now without exceeding the
    /// concurrent task limit.
    pub submit_now: usize,
}

/// Groups items by (endpoint, direction), keeps FIFO order inside a group and
/// cuts groups into batches of at most `transfer_batch_size`. Outbound
/// batches come first; within a direction, batches are ordered by their
/// oldest item.
pub fn plan_transfer_batches(
    pending: &[TransferItemRecord],
    cfg: &TransferConfig,
    in_flight: usize,
) -> Result<TransferPlan, TransferError> {
    let mut groups: BTreeMap<(u8, String), Vec<TransferItemRecord>> = BTreeMap::new();
    for it in pending {
        let ep = it.remote_endpoint();
        if !cfg.is_trusted(ep) {
            return Err(TransferError::UntrustedEndpoint(ep.to_string()));
        }
        let dir_rank = if it.direction == Direction::Out { 0 } else { 1 };
        groups.entry((dir_rank, ep.to_string())).or_default().push(it.clone());
    }
    let mut batches = Vec::new();
    for ((_, ep), mut items) in groups {
        items.sort_by_key(|i| i.item_id);
        for chunk in items.chunks(cfg.transfer_batch_size.max(1)) {
            batches.push(TransferBatch {
                batch_id: 0,
                remote_endpoint: ep.clone(),
                direction: chunk[0].direction,
                items: chunk.to_vec(),
                task_ref: None,
                state: BatchState::Submitted,
            });
        }
    }
    batches.sort_by_key(|b| (b.direction == Direction::In, b.items[0].item_id));
    for (i, b) in batches.iter_mut().enumerate() {
        b.batch_id = i as u64;
    }
    let submit_now = cfg.max_concurrent_tasks.saturating_sub(in_flight).min(batches.len());
    Ok(TransferPlan { batches, submit_now })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TransferTickReport {
    pub in_flight: usize,
    pub submitted: usize,
    pub items_done: usize,
    pub items_retried: usize,
    pub items_failed: usize,
}

pub struct TransferModule<T: TransferInterface> {
    api: Arc<dyn Api>,
    iface: T,
    site: SiteId,
    cfg: TransferConfig,
    backoff: Backoff,
}

impl<T: TransferInterface> TransferModule<T> {
    pub fn new(api: Arc<dyn Api>, iface: T, site: SiteId, cfg: TransferConfig) -> Self {
        TransferModule { api, iface, site, cfg, backoff: Backoff::default() }
    }

    pub fn interface(&mut self) -> &mut T {
        &mut self.iface
    }

    fn list(&self, state: TransferItemState) -> Result<Vec<TransferItemRecord>, ModuleError> {
        Ok(self.api.list_transfers(&TransferFilter { site_id: self.site, state: Some(state), direction: None })?)
    }

    fn retry_or_fail(&self, it: &TransferItemRecord, report: &mut TransferTickReport) -> TransferUpdate {
        let attempts = it.attempts + 1;
        let state = if attempts >= self.cfg.max_attempts {
            report.items_failed += 1;
            log::warn!("transfer item {} failed after {attempts} attempts", it.item_id);
            TransferItemState::Error
        } else {
            report.items_retried += 1;
            TransferItemState::Pending
        };
        TransferUpdate { item_id: it.item_id, state, task_ref: None, attempts: Some(attempts) }
    }

    /// One pass: poll in-flight tasks, then submit new batches up to the
    /// concurrency limit. All state lives in the service, so a fresh module
    /// picks up exactly where a previous one stopped.
    pub fn tick(&mut self, now: Timestamp) -> Result<TransferTickReport, ModuleError> {
        let mut report = TransferTickReport::default();
        if !self.backoff.ready(now) {
            return Ok(report);
        }
        let mut tasks: BTreeMap<String, Vec<TransferItemRecord>> = BTreeMap::new();
        for it in self.list(TransferItemState::Active)? {
            tasks.entry(it.task_ref.clone().unwrap_or_default()).or_default().push(it);
        }
        let mut updates = Vec::new();
        for (task_ref, items) in &tasks {
            match self.iface.poll_task(task_ref) {
                Ok(TransferTaskState::Active) => report.in_flight += 1,
                Ok(TransferTaskState::Done) => {
                    report.items_done += items.len();
                    updates.extend(items.iter().map(|i| TransferUpdate {
                        item_id: i.item_id,
                        state: TransferItemState::Done,
                        task_ref: None,
                        attempts: Some(i.attempts + 1),
                    }));
                }
                // The backend no longer knows the task: treat it as failed.
                Ok(TransferTaskState::Failed) | Err(PlatformError::Rejected(_)) => {
                    for it in items {
                        updates.push(self.retry_or_fail(it, &mut report));
                    }
                }
                Err(e) => {
                    report.in_flight += 1;
                    self.backoff.fail(now, &e);
                }
            }
        }
        if !updates.is_empty() {
            self.api.update_transfers(&updates)?;
        }

        let mut updates = Vec::new();
        let (trusted, untrusted): (Vec<_>, Vec<_>) =
            self.list(TransferItemState::Pending)?.into_iter().partition(|i| self.cfg.is_trusted(i.remote_endpoint()));
        for it in untrusted {
            log::warn!("transfer item {} names untrusted endpoint {}", it.item_id, it.remote_endpoint());
            report.items_failed += 1;
            updates.push(TransferUpdate { item_id: it.item_id, state: TransferItemState::Error, task_ref: None, attempts: None });
        }
        let plan = plan_transfer_batches(&trusted, &self.cfg, report.in_flight).expect("untrusted items removed");
        for batch in plan.batches.into_iter().take(plan.submit_now) {
            let task = TransferTask { remote_endpoint: batch.remote_endpoint, direction: batch.direction, items: batch.items };
            match self.iface.submit_task(&task) {
                Ok(task_ref) => {
                    report.submitted += 1;
                    updates.extend(task.items.iter().map(|i| TransferUpdate {
                        item_id: i.item_id,
                        state: TransferItemState::Active,
                        task_ref: Some(task_ref.clone()),
                        attempts: None,
                    }));
                }
                Err(PlatformError::Rejected(why)) => {
                    log::warn!("transfer task rejected: {why}");
                    for it in &task.items {
                        updates.push(self.retry_or_fail(it, &mut report));
                    }
                }
                Err(e) => {
                    self.backoff.fail(now, &e);
                    break;
                }
            }
        }
        if !updates.is_empty() {
            self.api.update_transfers(&updates)?;
        }
        if report.submitted > 0 || report.items_done > 0 {
            self.backoff.succeed();
        }
        report.in_flight += report.submitted;
        Ok(report)
    }
}
