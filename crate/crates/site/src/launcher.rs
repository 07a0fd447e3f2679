//! The pilot-job launcher: runs inside one allocation, leases jobs from the
//! service, packs them onto its nodes and reports their progress.
//!
//! The launcher is driven by [`Launcher::tick`] so it runs unchanged on the
//! wall clock and on a simulated clock.

use std::collections::BTreeMap;
use std::sync::Arc;

use conduit_core::{
    render_command, AppId, AppSpec, BatchJobId, EventData, JobId, JobMode, JobRecord, JobState, NodePool,
    NodeResource, SessionId, SiteId, TaskAssignment, Timestamp,
};
use conduit_service::{AcquireRequest, Api, CreateSession, ErrorKind, JobUpdate};
use serde::{Deserialize, Serialize};

use crate::platform::{AppRunInterface, RunStatus, SpawnSpec};
use crate::ModuleError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LauncherConfig {
    pub site_id: SiteId,
    pub batchjob_id: Option<BatchJobId>,
    pub job_mode: JobMode,
    pub num_nodes: u32,
    pub cores_per_node: u32,
    pub gpus_per_node: f64,
    pub max_tasks_per_node: u32,
    /// Seconds with nothing running and nothing to acquire before exiting.
    pub idle_timeout: f64,
    /// Allocation length in seconds, if bounded.
    pub wall_time: Option<f64>,
    /// Tasks are stopped this many seconds before the wall time runs out.
    pub grace: f64,
    pub heartbeat_interval: f64,
    /// Expected spacing of ticks, in seconds.
    pub poll_interval: f64,
    /// Serialized cost of one launch in per-task-spawn mode, in seconds.
    pub spawn_cost: f64,
    /// Jobs requested per tick per node that still has room.
    pub prefetch_factor: u32,
    /// Directory whose `data/` holds the job working directories.
    pub site_path: String,
}

impl LauncherConfig {
    pub fn new(site_id: SiteId, num_nodes: u32) -> Self {
        LauncherConfig {
            site_id,
            batchjob_id: None,
            job_mode: JobMode::PerTaskSpawn,
            num_nodes,
            cores_per_node: 64,
            gpus_per_node: 0.0,
            max_tasks_per_node: 64,
            idle_timeout: 120.0,
            wall_time: None,
            grace: 30.0,
            heartbeat_interval: 10.0,
            poll_interval: 1.0,
            spawn_cost: 0.0,
            prefetch_factor: 1,
            site_path: ".".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExitReason {
    Walltime,
    Idle,
    Signal,
    /// The service expired the session; running work was already reset.
    LeaseLost,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LauncherStatus {
    Active,
    Exited(ExitReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LauncherStats {
    pub acquired: usize,
    pub started: usize,
    pub done: usize,
    pub errored: usize,
    pub timed_out: usize,
}

#[derive(Debug, Clone)]
struct Live {
    job: JobRecord,
    assignment: TaskAssignment,
    handle: u64,
    started: Timestamp,
}

pub struct Launcher<R: AppRunInterface> {
    api: Arc<dyn Api>,
    run: R,
    cfg: LauncherConfig,
    session: SessionId,
    pool: NodePool,
    running: BTreeMap<JobId, Live>,
    waiting: Vec<JobRecord>,
    apps: BTreeMap<AppId, AppSpec>,
    started_at: Timestamp,
    last_heartbeat: Timestamp,
    idle_since: Option<Timestamp>,
    spawn_free_at: Timestamp,
    status: LauncherStatus,
    stats: LauncherStats,
}

fn with_lease(session: SessionId, job: JobId, to: JobState, at: Timestamp, data: EventData) -> JobUpdate {
    JobUpdate { session_id: Some(session), timestamp: Some(at), data, ..JobUpdate::transition(job, to) }
}

impl<R: AppRunInterface> Launcher<R> {
    /// Opens a session and loads the site's apps.
    pub fn start(api: Arc<dyn Api>, run: R, cfg: LauncherConfig, now: Timestamp) -> Result<Self, ModuleError> {
        let session =
            api.create_session(&CreateSession { site_id: cfg.site_id, batchjob_id: cfg.batchjob_id })?.session_id;
        let apps = api.list_apps(Some(cfg.site_id))?.into_iter().map(|a| (a.app_id, a)).collect();
        let nodes = (0..cfg.num_nodes)
            .map(|i| NodeResource::new(i, cfg.cores_per_node, cfg.gpus_per_node, cfg.max_tasks_per_node))
            .collect();
        Ok(Launcher {
            pool: NodePool::from_nodes(nodes, cfg.max_tasks_per_node),
            api,
            run,
            cfg,
            session,
            running: BTreeMap::new(),
            waiting: Vec::new(),
            apps,
            started_at: now,
            last_heartbeat: now,
            idle_since: None,
            spawn_free_at: now,
            status: LauncherStatus::Active,
            stats: LauncherStats::default(),
        })
    }

    pub fn session_id(&self) -> SessionId {
        self.session
    }

    pub fn status(&self) -> LauncherStatus {
        self.status
    }

    pub fn stats(&self) -> LauncherStats {
        self.stats
    }

    pub fn running_jobs(&self) -> impl Iterator<Item = JobId> + '_ {
        self.running.keys().copied()
    }

    pub fn pool(&self) -> &NodePool {
        &self.pool
    }

    pub fn app_run(&mut self) -> &mut R {
        &mut self.run
    }

    /// Cores and GPUs deducted from the nodes equal the footprint of the
    /// running assignments.
    pub fn accounting_consistent(&self) -> bool {
        self.pool.nodes().iter().all(|n| {
            let (mut cores, mut gpus, mut tasks) = (0u32, 0f64, 0usize);
            for l in self.running.values().filter(|l| l.assignment.node_ids.contains(&n.node_id)) {
                cores += l.job.resources.cores_per_node();
                gpus += l.job.resources.gpus_per_node();
                tasks += 1;
            }
            n.cores_total - n.cores_free == cores
                && (n.gpus_total - n.gpus_free - gpus).abs() < 1e-6
                && n.task_count() == tasks
        })
    }

    /// Jobs the launcher may still take on without overcommitting.
    fn free_slots(&self) -> usize {
        self.pool
            .nodes()
            .iter()
            .map(|n| {
                let limit = n.resident_packing.iter().copied().min().unwrap_or(u32::MAX) as usize;
                (n.occupancy_slots_free as usize).min(limit.saturating_sub(n.task_count()))
            })
            .sum()
    }

    fn nodes_with_room(&self) -> usize {
        self.pool
            .nodes()
            .iter()
            .filter(|n| {
                n.occupancy_slots_free > 0
                    && (n.task_count() as u32) < n.resident_packing.iter().copied().min().unwrap_or(u32::MAX)
            })
            .count()
    }

    fn send(&self, updates: &[JobUpdate]) -> Result<(), ModuleError> {
        if updates.is_empty() {
            return Ok(());
        }
        let out = self.api.update_jobs(updates)?;
        for e in out.errors {
            log::warn!("launcher update for job {} rejected: {}", e.job_id, e.message);
        }
        Ok(())
    }

    fn app(&mut self, id: AppId) -> Option<&AppSpec> {
        if !self.apps.contains_key(&id) {
            if let Ok(apps) = self.api.list_apps(Some(self.cfg.site_id)) {
                self.apps = apps.into_iter().map(|a| (a.app_id, a)).collect();
            }
        }
        self.apps.get(&id)
    }

    pub fn tick(&mut self, now: Timestamp) -> Result<LauncherStatus, ModuleError> {
        if self.status != LauncherStatus::Active {
            return Ok(self.status);
        }
        if now.secs_since(self.last_heartbeat) >= self.cfg.heartbeat_interval {
            match self.api.heartbeat(self.session) {
                Ok(_) => self.last_heartbeat = now,
                Err(e) if matches!(e.code, ErrorKind::SessionExpired | ErrorKind::UnknownSession) => {
                    self.abandon();
                    return Ok(self.status);
                }
                Err(e) => log::warn!("heartbeat failed: {e}"),
            }
        }
        if let Some(w) = self.cfg.wall_time {
            if now >= self.started_at.plus_secs(w - self.cfg.grace) {
                self.shutdown(ExitReason::Walltime, now)?;
                return Ok(self.status);
            }
        }
        self.reap(now)?;
        let acquired = self.acquire(now)?;
        self.launch(now)?;
        if self.running.is_empty() && self.waiting.is_empty() && acquired == 0 {
            let since = *self.idle_since.get_or_insert(now);
            if now.secs_since(since) >= self.cfg.idle_timeout {
                self.shutdown(ExitReason::Idle, now)?;
            }
        } else {
            self.idle_since = None;
        }
        Ok(self.status)
    }

    fn reap(&mut self, now: Timestamp) -> Result<(), ModuleError> {
        let mut updates = Vec::new();
        let ids: Vec<JobId> = self.running.keys().copied().collect();
        for id in ids {
            let handle = self.running[&id].handle;
            if let RunStatus::Exited { code, at } = self.run.poll(handle) {
                let live = self.running.remove(&id).expect("running");
                self.pool.release(&live.assignment, &live.job.resources);
                let at = at.unwrap_or(now).max(live.started);
                if code == 0 {
                    self.stats.done += 1;
                    updates.push(with_lease(self.session, id, JobState::RunDone, at, EventData::new()));
                } else {
                    self.stats.errored += 1;
                    let data = EventData::from([("exit_code".to_string(), code.to_string())]);
                    updates.push(with_lease(self.session, id, JobState::RunError, at, data));
                }
            }
        }
        updates.sort_by_key(|u| u.timestamp);
        self.send(&updates)
    }

    fn acquire(&mut self, now: Timestamp) -> Result<usize, ModuleError> {
        let mut max = self.free_slots().min(self.cfg.prefetch_factor as usize * self.nodes_with_room());
        if self.cfg.job_mode == JobMode::PerTaskSpawn && self.cfg.spawn_cost > 0.0 {
            let horizon = now.plus_secs(self.cfg.poll_interval);
            let budget = (horizon - self.spawn_free_at.max(now)) as f64 / 1e6 / self.cfg.spawn_cost;
            max = max.min(budget.floor().max(0.0) as usize);
        }
        max = max.saturating_sub(self.waiting.len());
        if max == 0 {
            return Ok(0);
        }
        let jobs = self.api.acquire(self.session, &AcquireRequest::new(max, self.pool.nodes().to_vec()))?;
        self.last_heartbeat = now;
        self.stats.acquired += jobs.len();
        let n = jobs.len();
        self.waiting.extend(jobs);
        Ok(n)
    }

    fn launch(&mut self, now: Timestamp) -> Result<(), ModuleError> {
        let mut starts = Vec::new();
        let mut failures = Vec::new();
        let waiting = std::mem::take(&mut self.waiting);
        for job in waiting {
            let Some(assignment) = self.pool.try_place(job.job_id, &job.resources) else {
                self.waiting.push(job);
                continue;
            };
            let start_at = if self.cfg.job_mode == JobMode::PerTaskSpawn && self.cfg.spawn_cost > 0.0 {
                let t = self.spawn_free_at.max(now);
                self.spawn_free_at = t.plus_secs(self.cfg.spawn_cost);
                t
            } else {
                now
            };
            let spawn = match self.app(job.app_id).cloned() {
                None => Err(format!("app {} is not registered at this site", job.app_id)),
                Some(app) => render_command(&app, &job.parameters).map_err(|e| e.to_string()).and_then(|command| {
                    let spec = SpawnSpec {
                        job_id: job.job_id,
                        app_name: app.name.clone(),
                        command,
                        workdir: format!("{}/data/{}", self.cfg.site_path, job.workdir),
                        env: app.environment.clone(),
                        node_ids: assignment.node_ids.clone(),
                        ranks_per_node: job.resources.ranks_per_node,
                        threads_per_rank: job.resources.threads_per_rank,
                        job_mode: self.cfg.job_mode,
                        start_at,
                    };
                    self.run.spawn(&spec).map_err(|e| e.to_string())
                }),
            };
            starts.push(with_lease(self.session, job.job_id, JobState::Running, start_at, EventData::new()));
            self.stats.started += 1;
            match spawn {
                Ok(handle) => {
                    self.running.insert(job.job_id, Live { job, assignment, handle, started: start_at });
                }
                Err(why) => {
                    self.pool.release(&assignment, &job.resources);
                    self.stats.errored += 1;
                    let data = EventData::from([("exit_code".to_string(), "-1".to_string()), ("error".to_string(), why)]);
                    failures.push(with_lease(self.session, job.job_id, JobState::RunError, start_at, data));
                }
            }
        }
        self.send(&starts)?;
        self.send(&failures)
    }

    /// Stops the launcher. Walltime and signal exits terminate running tasks
    /// and report them as timed out; every exit closes the session, which
    /// releases acquired jobs that never started.
    pub fn shutdown(&mut self, reason: ExitReason, now: Timestamp) -> Result<(), ModuleError> {
        if self.status != LauncherStatus::Active {
            return Ok(());
        }
        self.reap(now)?;
        let mut updates = Vec::new();
        let running = std::mem::take(&mut self.running);
        for (id, live) in running {
            self.run.terminate(live.handle);
            self.pool.release(&live.assignment, &live.job.resources);
            self.stats.timed_out += 1;
            let data = EventData::from([("reason".to_string(), format!("{reason:?}").to_lowercase())]);
            updates.push(with_lease(self.session, id, JobState::RunTimeout, now.max(live.started), data));
        }
        self.send(&updates)?;
        self.waiting.clear();
        match self.api.delete_session(self.session) {
            Ok(_) => {}
            Err(e) if matches!(e.code, ErrorKind::SessionExpired | ErrorKind::UnknownSession) => {}
            Err(e) => return Err(e.into()),
        }
        self.status = LauncherStatus::Exited(reason);
        Ok(())
    }

    /// Stops local work without talking to the service.
    fn abandon(&mut self) {
        for (_, live) in std::mem::take(&mut self.running) {
            self.run.terminate(live.handle);
            self.pool.release(&live.assignment, &live.job.resources);
        }
        self.waiting.clear();
        self.status = LauncherStatus::Exited(ExitReason::LeaseLost);
    }

    /// Hard kill: the process vanishes. Tasks die with it and the service
    /// only finds out when the session expires.
    pub fn kill(mut self) {
        for (_, live) in std::mem::take(&mut self.running) {
            self.run.terminate(live.handle);
        }
    }
}
