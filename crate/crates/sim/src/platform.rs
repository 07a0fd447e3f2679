//! Simulated implementations of the facility interfaces. They read time
//! from a shared [`ManualClock`] and keep their state in reference-counted
//! cells shared with the event loop, which is single-threaded.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;
use std::sync::Arc;

use conduit_core::{BatchJobId, Clock, Direction, JobId, JobMode, ManualClock, Timestamp};
use conduit_site::{
    AppRunInterface, BackfillWindow, PlatformError, RunStatus, SchedulerInterface, SchedulerState, SpawnSpec,
    SubmitRequest, TransferInterface, TransferTask, TransferTaskState,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::fabric::{Fabric, TaskStatus};
use crate::profile::{sample_queue_delay, QueueModel, RuntimeModel};

/// One allocation as the simulated batch scheduler sees it.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub scheduler_id: String,
    pub batchjob_id: BatchJobId,
    pub num_nodes: u32,
    /// Minutes.
    pub wall_time: u32,
    pub job_mode: JobMode,
    pub submitted_at: Timestamp,
    pub start_at: Timestamp,
    pub state: SchedulerState,
}

/// Batch-scheduler state of one site, shared by the scheduler adapter and
/// the event loop. The loop starts launchers for allocations whose start
/// time has come and ends allocations when their launcher goes away.
pub struct Facility {
    clock: Arc<ManualClock>,
    queues: BTreeMap<String, QueueModel>,
    rng: ChaCha8Rng,
    next_id: u64,
    pub allocations: BTreeMap<String, Allocation>,
    /// Allocations submitted since the event loop last looked.
    pub fresh: Vec<String>,
    /// Running allocations deleted through the scheduler.
    pub cancelled: Vec<String>,
    pub windows: Vec<BackfillWindow>,
}

impl Facility {
    pub fn new(clock: Arc<ManualClock>, queues: BTreeMap<String, QueueModel>, rng: ChaCha8Rng) -> Self {
        Facility {
            clock,
            queues,
            rng,
            next_id: 0,
            allocations: BTreeMap::new(),
            fresh: Vec::new(),
            cancelled: Vec::new(),
            windows: Vec::new(),
        }
    }

    pub fn end(&mut self, id: &str, state: SchedulerState) {
        if let Some(a) = self.allocations.get_mut(id) {
            if matches!(a.state, SchedulerState::Queued | SchedulerState::Running) {
                a.state = state;
            }
        }
    }
}

#[derive(Clone)]
pub struct SimScheduler(pub Rc<RefCell<Facility>>);

impl SchedulerInterface for SimScheduler {
    fn submit(&mut self, req: &SubmitRequest) -> Result<String, PlatformError> {
        let mut f = self.0.borrow_mut();
        let now = f.clock.now();
        let Facility { queues, rng, .. } = &mut *f;
        let delay = sample_queue_delay(queues, &req.queue, rng).map_err(|e| PlatformError::Rejected(e.to_string()))?;
        f.next_id += 1;
        let id = format!("sim.{}", f.next_id);
        f.allocations.insert(
            id.clone(),
            Allocation {
                scheduler_id: id.clone(),
                batchjob_id: req.batchjob_id,
                num_nodes: req.num_nodes,
                wall_time: req.wall_time,
                job_mode: req.job_mode,
                submitted_at: now,
                start_at: now.plus_secs(delay),
                state: SchedulerState::Queued,
            },
        );
        f.fresh.push(id.clone());
        Ok(id)
    }

    fn poll(&mut self) -> Result<BTreeMap<String, SchedulerState>, PlatformError> {
        Ok(self.0.borrow().allocations.iter().map(|(k, a)| (k.clone(), a.state)).collect())
    }

    fn delete(&mut self, scheduler_id: &str) -> Result<(), PlatformError> {
        let mut f = self.0.borrow_mut();
        let Some(a) = f.allocations.get_mut(scheduler_id) else { return Ok(()) };
        match a.state {
            SchedulerState::Queued => a.state = SchedulerState::Finished,
            SchedulerState::Running => {
                a.state = SchedulerState::Finished;
                f.cancelled.push(scheduler_id.to_string());
            }
            _ => {}
        }
        Ok(())
    }

    fn backfill_windows(&mut self) -> Result<Vec<BackfillWindow>, PlatformError> {
        Ok(self.0.borrow().windows.clone())
    }
}

/// Transfer adapter for one site, backed by the shared [`Fabric`].
pub struct SimTransfer {
    clock: Arc<ManualClock>,
    origin: Timestamp,
    local: String,
    fabric: Rc<RefCell<Fabric>>,
}

impl SimTransfer {
    pub fn new(clock: Arc<ManualClock>, origin: Timestamp, local: &str, fabric: Rc<RefCell<Fabric>>) -> Self {
        SimTransfer { clock, origin, local: local.to_string(), fabric }
    }

    fn now(&self) -> f64 {
        self.clock.now().secs_since(self.origin)
    }
}

impl TransferInterface for SimTransfer {
    fn submit_task(&mut self, task: &TransferTask) -> Result<String, PlatformError> {
        let (src, dst) = match task.direction {
            Direction::In => (task.remote_endpoint.as_str(), self.local.as_str()),
            Direction::Out => (self.local.as_str(), task.remote_endpoint.as_str()),
        };
        let now = self.now();
        let id = self
            .fabric
            .borrow_mut()
            .submit(src, dst, task.items.len(), task.total_bytes() as f64, now)
            .ok_or_else(|| PlatformError::Rejected(format!("no route {src} -> {dst}")))?;
        Ok(format!("sim-{id}"))
    }

    fn poll_task(&mut self, task_ref: &str) -> Result<TransferTaskState, PlatformError> {
        let id = task_ref
            .strip_prefix("sim-")
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| PlatformError::Rejected(format!("unknown task {task_ref}")))?;
        let now = self.now();
        match self.fabric.borrow_mut().poll(id, now) {
            None => Err(PlatformError::Rejected(format!("unknown task {task_ref}"))),
            Some(TaskStatus::Done { .. }) => Ok(TransferTaskState::Done),
            Some(_) => Ok(TransferTaskState::Active),
        }
    }
}

/// World-wide record of live launch handles, used to assert that no job is
/// ever running twice.
#[derive(Debug, Default)]
pub struct LaunchRegistry {
    live: BTreeMap<JobId, (u64, u64)>,
    pub violations: usize,
    pub spawned: usize,
}

impl LaunchRegistry {
    pub fn live_count(&self) -> usize {
        self.live.len()
    }
}

#[derive(Debug, Clone, Copy)]
struct SimTask {
    job_id: JobId,
    end: Timestamp,
    done: bool,
}

/// Task runner for one launcher. Run times come from per-app models.
pub struct SimAppRun {
    clock: Arc<ManualClock>,
    runtimes: Rc<BTreeMap<String, RuntimeModel>>,
    rng: ChaCha8Rng,
    owner: u64,
    registry: Rc<RefCell<LaunchRegistry>>,
    tasks: Vec<SimTask>,
}

impl SimAppRun {
    pub fn new(
        clock: Arc<ManualClock>,
        runtimes: Rc<BTreeMap<String, RuntimeModel>>,
        rng: ChaCha8Rng,
        owner: u64,
        registry: Rc<RefCell<LaunchRegistry>>,
    ) -> Self {
        SimAppRun { clock, runtimes, rng, owner, registry, tasks: Vec::new() }
    }

    fn retire(&mut self, handle: u64) {
        let t = &mut self.tasks[handle as usize];
        if !t.done {
            t.done = true;
            let mut reg = self.registry.borrow_mut();
            if reg.live.get(&t.job_id) == Some(&(self.owner, handle)) {
                reg.live.remove(&t.job_id);
            }
        }
    }
}

impl AppRunInterface for SimAppRun {
    fn spawn(&mut self, spec: &SpawnSpec) -> Result<u64, PlatformError> {
        let model = self
            .runtimes
            .get(&spec.app_name)
            .ok_or_else(|| PlatformError::Rejected(format!("no runtime model for app {}", spec.app_name)))?;
        let runtime = model.sample(&mut self.rng);
        let handle = self.tasks.len() as u64;
        self.tasks.push(SimTask { job_id: spec.job_id, end: spec.start_at.plus_secs(runtime), done: false });
        let mut reg = self.registry.borrow_mut();
        reg.spawned += 1;
        if reg.live.insert(spec.job_id, (self.owner, handle)).is_some() {
            reg.violations += 1;
        }
        Ok(handle)
    }

    fn poll(&mut self, handle: u64) -> RunStatus {
        let Some(t) = self.tasks.get(handle as usize).copied() else {
            return RunStatus::Exited { code: -1, at: None };
        };
        if !t.done && self.clock.now() < t.end {
            return RunStatus::Running;
        }
        self.retire(handle);
        RunStatus::Exited { code: 0, at: Some(t.end) }
    }

    fn terminate(&mut self, handle: u64) {
        if (handle as usize) < self.tasks.len() {
            self.retire(handle);
        }
    }
}

/// Uniform jitter factor in `[1 - j, 1 + j]`.
pub fn jitter<R: Rng>(rng: &mut R, j: f64) -> f64 {
    if j <= 0.0 {
        1.0
    } else {
        rng.random_range(1.0 - j..=1.0 + j)
    }
}
