//! The discrete-event loop. It boots an in-process service, one agent per
//! site and a launcher per running allocation, all against the simulated
//! interfaces, and advances a shared [`ManualClock`] from event to event.

use std::cell::RefCell;
use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::rc::Rc;
use std::sync::Arc;

use conduit_client::{distribute_round_robin, distribute_shortest_backlog, RoutingState};
use conduit_core::{
    AppId, AppSpec, Clock, Direction, EventRecord, JobDraft, JobId, JobRecord, JobState, ManualClock, SiteId,
    Timestamp, TransferSlot,
};
use conduit_service::{
    Api, CreateBatchJob, EventFilter, JobFilter, JobQuery, LocalApi, RegisterSite, Service, StoreConfig,
};
use conduit_site::{
    ElasticQueueModule, Launcher, LauncherConfig, LauncherStatus, SchedulerModule, SchedulerState, SiteAgent,
    TransferConfig, TransferModule,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::fabric::{Fabric, Stall};
use crate::platform::{jitter, Facility, LaunchRegistry, SimAppRun, SimScheduler, SimTransfer};
use crate::profile::RuntimeModel;
use crate::report::{build_metrics, RunRecord, SimMetrics};
use crate::rng::substream;
use crate::scenario::{ConfigError, Phase, Scenario, SiteSpec, Strategy};

/// Simulated time zero.
pub const ORIGIN: Timestamp = Timestamp::ZERO;

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub events: Vec<EventRecord>,
    pub jobs: Vec<JobRecord>,
    pub record: RunRecord,
    pub metrics: SimMetrics,
}

impl RunOutcome {
    /// One JSON object per line, in event-id order.
    pub fn events_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("events serialize"));
            out.push('\n');
        }
        out
    }

    pub fn metrics_json(&self) -> String {
        serde_json::to_string_pretty(&self.metrics).expect("metrics serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Ev {
    Reap,
    Client(usize),
    StaticAlloc(usize, usize),
    AllocStart(usize, String),
    AllocEnd(usize, String),
    Agent(usize),
    Launcher(usize, String),
    Kill,
}

struct SiteRt {
    name: String,
    spec: SiteSpec,
    site_id: SiteId,
    apps: BTreeMap<String, AppId>,
    agent: SiteAgent<SimScheduler, SimTransfer>,
    facility: Rc<RefCell<Facility>>,
    launchers: BTreeMap<String, Launcher<SimAppRun>>,
    runtimes: Rc<BTreeMap<String, RuntimeModel>>,
    tick_rng: ChaCha8Rng,
    nodes_up: u32,
}

struct ClientRt {
    phases: Vec<Phase>,
    submitted_by_phase: Vec<usize>,
    open: usize,
    rng: ChaCha8Rng,
    routing: Option<RoutingState>,
    targets: Vec<usize>,
    datasets: u64,
}

struct World {
    sc: Scenario,
    clock: Arc<ManualClock>,
    svc: Arc<Service>,
    api: Arc<dyn Api>,
    sites: Vec<SiteRt>,
    client: ClientRt,
    registry: Rc<RefCell<LaunchRegistry>>,
    heap: BinaryHeap<Reverse<(Timestamp, u64, Ev)>>,
    seq: u64,
    kill_rng: ChaCha8Rng,
    record: RunRecord,
    next_owner: u64,
}

fn at(secs: f64) -> Timestamp {
    ORIGIN.plus_secs(secs)
}

fn app_spec(model: &crate::scenario::AppModel) -> AppSpec {
    let mut slots = BTreeMap::new();
    for s in &model.inputs {
        slots.insert(
            s.name.clone(),
            TransferSlot {
                direction: Direction::In,
                required: true,
                local_path: format!("in/{}", s.name),
                recursive: false,
                description: String::new(),
            },
        );
    }
    for s in &model.outputs {
        slots.insert(
            s.name.clone(),
            TransferSlot {
                direction: Direction::Out,
                required: true,
                local_path: format!("out/{}", s.name),
                recursive: false,
                description: String::new(),
            },
        );
    }
    AppSpec { name: model.name.clone(), command_template: model.name.clone(), transfer_slots: slots, ..Default::default() }
}

impl World {
    fn build(sc: Scenario) -> Result<World, ConfigError> {
        sc.validate()?;
        let clock = Arc::new(ManualClock::new(ORIGIN));
        let store = StoreConfig { lease_ttl_secs: sc.service.lease_ttl, max_retries: sc.service.max_retries };
        let svc = Arc::new(Service::in_memory(store, clock.clone()));
        let user = svc.register_user("sim", "sim").map_err(|e| ConfigError::Invalid(e.to_string()))?.user_id;
        let api: Arc<dyn Api> = Arc::new(LocalApi::new(svc.clone(), user));

        let mut fabric = Fabric::new(&sc.routes).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for s in &sc.failures.transfer_stalls {
            fabric
                .add_stall(&Stall { start: s.start, end: s.end, route: s.route.clone() })
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        let fabric = Rc::new(RefCell::new(fabric));
        let invalid = |e: conduit_service::ApiError| ConfigError::Invalid(e.to_string());

        let mut sites = Vec::new();
        for spec in &sc.sites {
            let site = api
                .register_site(&RegisterSite { hostname: spec.name.clone(), path: format!("/sim/{}", spec.name) })
                .map_err(invalid)?;
            let specs: Vec<AppSpec> = spec.apps.iter().map(app_spec).collect();
            let ids = api.sync_apps(site.site_id, &specs).map_err(invalid)?;
            let apps = spec.apps.iter().map(|a| a.name.clone()).zip(ids).collect();
            let facility = Rc::new(RefCell::new(Facility::new(
                clock.clone(),
                spec.queues.clone(),
                substream(sc.seed, &format!("queue:{}", spec.name)),
            )));
            let tcfg = TransferConfig {
                local_endpoint: spec.name.clone(),
                trusted_remote_endpoints: vec![sc.client.source.clone()],
                max_concurrent_tasks: spec.transfer.max_concurrent,
                transfer_batch_size: spec.transfer.batch_size,
                max_attempts: spec.transfer.max_attempts,
            };
            let transfer = TransferModule::new(
                api.clone(),
                SimTransfer::new(clock.clone(), ORIGIN, &spec.name, fabric.clone()),
                site.site_id,
                tcfg,
            );
            let max_wait = spec.elastic.as_ref().map(|e| e.max_queue_wait);
            let scheduler = SchedulerModule::new(api.clone(), SimScheduler(facility.clone()), site.site_id, max_wait);
            let elastic = spec.elastic.clone().map(|cfg| ElasticQueueModule::new(api.clone(), site.site_id, cfg));
            let agent = SiteAgent::new(site.site_id, transfer, scheduler, elastic, spec.sync_interval);
            sites.push(SiteRt {
                name: spec.name.clone(),
                spec: spec.clone(),
                site_id: site.site_id,
                apps,
                agent,
                facility,
                launchers: BTreeMap::new(),
                runtimes: Rc::new(spec.apps.iter().map(|a| (a.name.clone(), a.runtime)).collect()),
                tick_rng: substream(sc.seed, &format!("agent:{}", spec.name)),
                nodes_up: 0,
            });
        }

        let targets: Vec<usize> = sc
            .target_sites()
            .iter()
            .filter_map(|n| sites.iter().position(|s| &s.name == n))
            .collect();
        let routing = (!targets.is_empty())
            .then(|| RoutingState::new(targets.iter().map(|&i| sites[i].site_id).collect(), sc.client.backlog_staleness));
        let client = ClientRt {
            phases: sc.client.phases.clone(),
            submitted_by_phase: vec![0; sc.client.phases.len()],
            open: sc.client.phases.len(),
            rng: substream(sc.seed, "client"),
            routing,
            targets,
            datasets: 0,
        };
        let record = RunRecord { site_names: sites.iter().map(|s| s.name.clone()).collect(), ..Default::default() };
        Ok(World {
            kill_rng: substream(sc.seed, "kill"),
            sc,
            clock,
            svc,
            api,
            sites,
            client,
            registry: Rc::new(RefCell::new(LaunchRegistry::default())),
            heap: BinaryHeap::new(),
            seq: 0,
            record,
            next_owner: 0,
        })
    }

    fn push(&mut self, t: Timestamp, ev: Ev) {
        self.seq += 1;
        self.heap.push(Reverse((t, self.seq, ev)));
    }

    fn now(&self) -> Timestamp {
        self.clock.now()
    }

    fn run(mut self) -> RunOutcome {
        self.push(ORIGIN, Ev::Reap);
        for i in 0..self.client.phases.len() {
            let start = self.client.phases[i].start();
            self.push(at(start), Ev::Client(i));
        }
        for s in 0..self.sites.len() {
            // Agents start at a random phase within their first period.
            let first = self.sites[s].spec.sync_interval * self.sites[s].tick_rng.random::<f64>();
            self.push(at(first), Ev::Agent(s));
            for a in 0..self.sites[s].spec.allocations.len() {
                let t = self.sites[s].spec.allocations[a].at;
                self.push(at(t), Ev::StaticAlloc(s, a));
            }
        }
        if let Some(every) = self.sc.failures.kill_launcher_every {
            let first = self.sc.failures.kill_start + every;
            self.push(at(first), Ev::Kill);
        }
        let end = at(self.sc.duration);
        while let Some(Reverse((t, _, ev))) = self.heap.pop() {
            if t > end {
                break;
            }
            self.clock.set(t);
            if self.handle(ev) {
                break;
            }
        }
        self.finish()
    }

    /// Returns true when the run should stop.
    fn handle(&mut self, ev: Ev) -> bool {
        let now = self.now();
        match ev {
            Ev::Reap => {
                self.svc.expire_stale_sessions();
                if self.sc.stop_when_drained && self.client.open == 0 && self.unfinished() == 0 {
                    self.record.drained_at = Some(now);
                    return true;
                }
                self.push(now.plus_secs(self.sc.service.reap_interval), Ev::Reap);
            }
            Ev::Client(i) => self.client_step(i),
            Ev::StaticAlloc(s, a) => {
                let site = &self.sites[s];
                let alloc = &site.spec.allocations[a];
                let req = CreateBatchJob {
                    site_id: site.site_id,
                    num_nodes: alloc.nodes,
                    wall_time: alloc.wall_time,
                    queue: alloc.queue.clone(),
                    project: String::new(),
                    job_mode: site.spec.launcher.job_mode,
                };
                if let Err(e) = self.api.create_batchjob(&req) {
                    log::warn!("static allocation at {} refused: {e}", site.name);
                }
            }
            Ev::Agent(s) => {
                self.sites[s].agent.tick(now);
                let (fresh, cancelled) = {
                    let mut f = self.sites[s].facility.borrow_mut();
                    (std::mem::take(&mut f.fresh), std::mem::take(&mut f.cancelled))
                };
                for id in fresh {
                    let start = self.sites[s].facility.borrow().allocations[&id].start_at;
                    self.push(start.max(now), Ev::AllocStart(s, id));
                }
                for id in cancelled {
                    self.end_launcher(s, &id, SchedulerState::Finished, true);
                }
                let site = &mut self.sites[s];
                let dt = site.spec.sync_interval * jitter(&mut site.tick_rng, site.spec.sync_jitter);
                self.push(now.plus_secs(dt), Ev::Agent(s));
            }
            Ev::AllocStart(s, id) => self.start_launcher(s, id),
            Ev::AllocEnd(s, id) => self.end_launcher(s, &id, SchedulerState::Finished, true),
            Ev::Launcher(s, id) => {
                let site = &mut self.sites[s];
                let Some(l) = site.launchers.get_mut(&id) else { return false };
                let status = match l.tick(now) {
                    Ok(st) => st,
                    Err(e) => {
                        log::warn!("launcher {id} at {}: {e}", site.name);
                        LauncherStatus::Active
                    }
                };
                if !l.accounting_consistent() {
                    self.record.accounting_violations += 1;
                }
                match status {
                    LauncherStatus::Active => {
                        let p = self.sites[s].spec.launcher.poll_interval;
                        self.push(now.plus_secs(p), Ev::Launcher(s, id));
                    }
                    LauncherStatus::Exited(_) => self.end_launcher(s, &id, SchedulerState::Finished, false),
                }
            }
            Ev::Kill => {
                let only = self.sc.failures.kill_site.clone();
                let victims: Vec<(usize, String)> = self
                    .sites
                    .iter()
                    .enumerate()
                    .filter(|(_, site)| only.as_ref().is_none_or(|n| n == &site.name))
                    .flat_map(|(s, site)| site.launchers.keys().map(move |k| (s, k.clone())))
                    .collect();
                if !victims.is_empty() {
                    let (s, id) = victims[self.kill_rng.random_range(0..victims.len())].clone();
                    let jobs: Vec<JobId> = self.sites[s].launchers[&id].running_jobs().collect();
                    self.record.killed_jobs.extend(jobs);
                    self.record.kills += 1;
                    self.end_launcher(s, &id, SchedulerState::Failed, true);
                }
                let every = self.sc.failures.kill_launcher_every.expect("kills scheduled");
                let next = now.plus_secs(every);
                if self.sc.failures.kill_end.is_none_or(|e| next <= at(e)) {
                    self.push(next, Ev::Kill);
                }
            }
        }
        false
    }

    fn unfinished(&self) -> usize {
        let states: Vec<JobState> = JobState::ALL.into_iter().filter(|s| !s.is_terminal()).collect();
        self.api.count_jobs(&JobFilter { states, ..Default::default() }).unwrap_or(usize::MAX)
    }

    fn start_launcher(&mut self, s: usize, id: String) {
        let now = self.now();
        let alloc = {
            let mut f = self.sites[s].facility.borrow_mut();
            let Some(a) = f.allocations.get_mut(&id) else { return };
            if a.state != SchedulerState::Queued {
                return;
            }
            a.state = SchedulerState::Running;
            a.clone()
        };
        self.next_owner += 1;
        let site = &self.sites[s];
        let l = &site.spec.launcher;
        let cfg = LauncherConfig {
            batchjob_id: Some(alloc.batchjob_id),
            job_mode: alloc.job_mode,
            cores_per_node: site.spec.node.cores,
            gpus_per_node: site.spec.node.gpus,
            max_tasks_per_node: site.spec.node.max_tasks,
            idle_timeout: l.idle_timeout,
            wall_time: Some(alloc.wall_time as f64 * 60.0),
            grace: l.grace,
            heartbeat_interval: l.heartbeat_interval,
            poll_interval: l.poll_interval,
            spawn_cost: l.spawn_cost,
            prefetch_factor: l.prefetch_factor,
            site_path: format!("/sim/{}", site.name),
            ..LauncherConfig::new(site.site_id, alloc.num_nodes)
        };
        let run = SimAppRun::new(
            self.clock.clone(),
            site.runtimes.clone(),
            substream(self.sc.seed, &format!("runtime:{}:{}", site.name, id)),
            self.next_owner,
            self.registry.clone(),
        );
        match Launcher::start(self.api.clone(), run, cfg, now) {
            Ok(launcher) => {
                let site = &mut self.sites[s];
                site.launchers.insert(id.clone(), launcher);
                site.nodes_up += alloc.num_nodes;
                let up = site.nodes_up as f64;
                self.record.capacity.entry(s).or_default().push((now, up));
                self.record.allocations += 1;
                self.push(now, Ev::Launcher(s, id.clone()));
                self.push(alloc.start_at.max(now).plus_secs(alloc.wall_time as f64 * 60.0), Ev::AllocEnd(s, id));
            }
            Err(e) => {
                log::warn!("launcher for {id} failed to start: {e}");
                self.sites[s].facility.borrow_mut().end(&id, SchedulerState::Failed);
            }
        }
    }

    /// Ends an allocation. `hard` drops the launcher without a shutdown, as
    /// a node failure or a scheduler kill would.
    fn end_launcher(&mut self, s: usize, id: &str, state: SchedulerState, hard: bool) {
        let now = self.now();
        let site = &mut self.sites[s];
        site.facility.borrow_mut().end(id, state);
        let Some(l) = site.launchers.remove(id) else { return };
        if hard {
            l.kill();
        }
        let nodes = site.facility.borrow().allocations[id].num_nodes;
        site.nodes_up -= nodes;
        let up = site.nodes_up as f64;
        self.record.capacity.entry(s).or_default().push((now, up));
    }

    fn client_step(&mut self, i: usize) {
        let now = self.now();
        let t = now.secs_since(ORIGIN);
        let phase = self.client.phases[i].clone();
        let next = match phase {
            Phase::Constant { rate, end, .. } => {
                self.submit(1, None);
                Some(t + 1.0 / rate).filter(|&n| n < end)
            }
            Phase::Poisson { rate, end, count, .. } => {
                self.submit(1, None);
                self.client.submitted_by_phase[i] += 1;
                let gap = Exp::new(rate).expect("validated").sample(&mut self.client.rng);
                let more = count.is_none_or(|c| self.client.submitted_by_phase[i] < c);
                Some(t + gap).filter(|&n| more && end.is_none_or(|e| n < e))
            }
            Phase::Batches { size, every, end, .. } => {
                self.submit(size, None);
                Some(t + every).filter(|&n| n < end)
            }
            Phase::Burst { count, .. } => {
                self.submit(count, None);
                None
            }
            Phase::Backlog { target, poll, end, .. } => {
                for k in 0..self.client.targets.len() {
                    let s = self.client.targets[k];
                    let pending = self.api.backlog(self.sites[s].site_id).map(|b| b.pending_total).unwrap_or(target);
                    if pending < target {
                        self.submit(target - pending, Some(s));
                    }
                }
                Some(t + poll).filter(|&n| n < end)
            }
        };
        match next {
            Some(n) => self.push(at(n), Ev::Client(i)),
            None => self.client.open -= 1,
        }
    }

    fn submit(&mut self, n: usize, site: Option<usize>) {
        if n == 0 || self.client.targets.is_empty() {
            return;
        }
        let now = self.now();
        let batch: Vec<usize> = (0..n).collect();
        let routed: Vec<(usize, usize)> = match (site, self.sc.client.strategy) {
            (Some(s), _) => vec![(s, n)],
            (None, Strategy::Single) => vec![(self.client.targets[0], n)],
            (None, strategy) => {
                let state = self.client.routing.as_mut().expect("targets exist");
                let split = if strategy == Strategy::RoundRobin {
                    distribute_round_robin(batch, state)
                } else {
                    distribute_shortest_backlog(batch, state, self.api.as_ref(), now)
                };
                split
                    .into_iter()
                    .map(|(sid, v)| (self.sites.iter().position(|x| x.site_id == sid).expect("known site"), v.len()))
                    .collect()
            }
        };
        for (s, count) in routed {
            let drafts: Vec<JobDraft> = (0..count).map(|_| self.draft(s)).collect();
            match self.api.create_jobs(&drafts) {
                Ok(jobs) => {
                    self.record.submitted += jobs.len();
                    *self.record.submitted_per_site.entry(s).or_default() += jobs.len();
                    self.record.first_submission.get_or_insert(now);
                    self.record.last_submission = Some(now);
                }
                Err(e) => log::warn!("submission to {} failed: {e}", self.sites[s].name),
            }
        }
    }

    fn draft(&mut self, s: usize) -> JobDraft {
        self.client.datasets += 1;
        let n = self.client.datasets;
        let site = &self.sites[s];
        let app_name = &self.sc.client.app;
        let model = site.spec.apps.iter().find(|a| &a.name == app_name).expect("validated");
        let source = &self.sc.client.source;
        let mut draft = JobDraft {
            app_id: site.apps[app_name],
            workdir: format!("{app_name}/{n}"),
            resources: model.resources.clone(),
            ..Default::default()
        };
        for slot in model.inputs.iter().chain(&model.outputs) {
            let dir = if model.inputs.contains(slot) { "data" } else { "results" };
            draft.transfer_bindings.insert(slot.name.clone(), format!("{source}:/{dir}/{n}/{}", slot.name));
            draft.transfer_bytes.insert(slot.name.clone(), (slot.mb * 1e6).round() as u64);
        }
        draft
    }

    fn finish(mut self) -> RunOutcome {
        self.record.end = self.now();
        self.record.double_launches = self.registry.borrow().violations;
        self.record.live_handles_at_end = self.registry.borrow().live_count();
        self.record.site_ids = self.sites.iter().map(|s| s.site_id).collect();
        let mut events = self.api.events(&EventFilter::default()).unwrap_or_default();
        events.sort_by_key(|e| e.event_id);
        let jobs = self.api.query_jobs(&JobQuery::default()).unwrap_or_default();
        let metrics = build_metrics(&self.sc, &self.record, &events, &jobs);
        RunOutcome { events, jobs, record: self.record, metrics }
    }
}

/// Runs one scenario to completion.
pub fn run_scenario(sc: &Scenario) -> Result<RunOutcome, ConfigError> {
    Ok(World::build(sc.clone())?.run())
}

/// Distinct job ids in `events` whose history matches `pred`.
pub fn jobs_where(events: &[EventRecord], pred: impl Fn(&[&EventRecord]) -> bool) -> BTreeSet<JobId> {
    let mut by_job: BTreeMap<JobId, Vec<&EventRecord>> = BTreeMap::new();
    for e in events {
        by_job.entry(e.job_id).or_default().push(e);
    }
    by_job.into_iter().filter(|(_, evs)| pred(evs)).map(|(id, _)| id).collect()
}
