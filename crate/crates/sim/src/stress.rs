//! Concurrent lease contention against one in-process service.
//!
//! Worker threads stand in for launchers. Rounds are separated by a barrier
//! so the main thread can advance the shared clock between them; within a
//! round the workers race freely on acquire, heartbeat and update. A shared
//! holder map records which worker believes it owns each job, so two live
//! owners of one job are caught the moment the second acquire returns.

use std::collections::BTreeMap;
use std::sync::{Arc, Barrier, Mutex};
use std::thread;

use conduit_core::{AppSpec, JobDraft, JobId, JobState, ManualClock, NodeResource, SessionId, SiteId, Timestamp};
use conduit_service::{
    AcquireRequest, Api, CreateSession, JobFilter, JobUpdate, LocalApi, RegisterSite, Service, StoreConfig,
};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StressConfig {
    pub seed: u64,
    pub workers: usize,
    pub rounds: usize,
    pub jobs: usize,
    /// Simulated seconds between rounds.
    pub round_secs: f64,
    pub lease_ttl: f64,
    /// Per-round probability that a live worker crashes.
    pub crash_probability: f64,
    /// Extra rounds to let the queue empty once crashes stop.
    pub drain_rounds: usize,
}

impl Default for StressConfig {
    fn default() -> Self {
        StressConfig {
            seed: 7,
            workers: 8,
            rounds: 1000,
            jobs: 12_000,
            round_secs: 1.0,
            lease_ttl: 5.0,
            crash_probability: 0.01,
            drain_rounds: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressReport {
    pub submitted: usize,
    pub census: BTreeMap<JobState, usize>,
    /// Acquires that returned a job another live worker still held.
    pub overlaps: usize,
    pub crashes: usize,
    /// Updates rejected because the worker's lease had gone.
    pub lease_losses: usize,
    pub completions: usize,
    pub rounds_run: usize,
}

impl StressReport {
    pub fn finished(&self) -> usize {
        self.census.get(&JobState::Finished).copied().unwrap_or(0)
    }
}

#[derive(Default)]
struct Tally {
    overlaps: usize,
    crashes: usize,
    lease_losses: usize,
    completions: usize,
}

struct Worker {
    id: usize,
    api: Arc<dyn Api>,
    site: SiteId,
    session: Option<SessionId>,
    held: Vec<(JobId, usize)>,
    down_until: usize,
}

const NODES: u32 = 4;

impl Worker {
    fn round(&mut self, r: usize, crashes_on: bool, p: f64, rng: &mut impl Rng, holders: &Mutex<BTreeMap<JobId, usize>>, tally: &Mutex<Tally>, down_rounds: usize) {
        if r < self.down_until {
            return;
        }
        let session = match self.session {
            Some(s) => s,
            None => match self.api.create_session(&CreateSession { site_id: self.site, batchjob_id: None }) {
                Ok(s) => {
                    self.session = Some(s.session_id);
                    s.session_id
                }
                Err(_) => return,
            },
        };
        if crashes_on && rng.random::<f64>() < p {
            // Heartbeats stop; whatever this worker held is abandoned.
            let mut h = holders.lock().unwrap();
            for (job, _) in self.held.drain(..) {
                if h.get(&job) == Some(&self.id) {
                    h.remove(&job);
                }
            }
            self.session = None;
            self.down_until = r + down_rounds;
            tally.lock().unwrap().crashes += 1;
            return;
        }
        if self.api.heartbeat(session).is_err() {
            self.lose_all(holders, tally);
            self.session = None;
            return;
        }

        let due: Vec<JobId> = self.held.iter().filter(|(_, at)| *at <= r).map(|(j, _)| *j).collect();
        if !due.is_empty() {
            let updates: Vec<JobUpdate> = due
                .iter()
                .map(|&job_id| JobUpdate { job_id, state: Some(JobState::RunDone), session_id: Some(session), ..Default::default() })
                .collect();
            let outcome = self.api.update_jobs(&updates);
            let rejected: Vec<JobId> = match &outcome {
                Ok(o) => o.errors.iter().map(|e| e.job_id).collect(),
                Err(_) => due.clone(),
            };
            let mut h = holders.lock().unwrap();
            let mut t = tally.lock().unwrap();
            for job in &due {
                if h.get(job) == Some(&self.id) {
                    h.remove(job);
                }
                if rejected.contains(job) {
                    t.lease_losses += 1;
                } else {
                    t.completions += 1;
                }
            }
            self.held.retain(|(j, _)| !due.contains(j));
        }

        let room = NODES as usize - self.held.len();
        if room == 0 {
            return;
        }
        let want = rng.random_range(1..=4).min(room);
        let free: Vec<NodeResource> = (self.held.len() as u32..NODES).map(|n| NodeResource::new(n, 64, 0.0, 1)).collect();
        let req = AcquireRequest { max_num_jobs: want, available: free, states: vec![JobState::StagedIn, JobState::RestartReady] };
        let Ok(jobs) = self.api.acquire(session, &req) else { return };
        if jobs.is_empty() {
            return;
        }
        {
            let mut h = holders.lock().unwrap();
            let mut t = tally.lock().unwrap();
            for j in &jobs {
                if let Some(prev) = h.insert(j.job_id, self.id) {
                    if prev != self.id {
                        t.overlaps += 1;
                    }
                }
            }
        }
        let updates: Vec<JobUpdate> = jobs
            .iter()
            .map(|j| JobUpdate { job_id: j.job_id, state: Some(JobState::Running), session_id: Some(session), ..Default::default() })
            .collect();
        let rejected: Vec<JobId> = match self.api.update_jobs(&updates) {
            Ok(o) => o.errors.iter().map(|e| e.job_id).collect(),
            Err(_) => jobs.iter().map(|j| j.job_id).collect(),
        };
        for j in jobs {
            if rejected.contains(&j.job_id) {
                let mut h = holders.lock().unwrap();
                if h.get(&j.job_id) == Some(&self.id) {
                    h.remove(&j.job_id);
                }
                continue;
            }
            self.held.push((j.job_id, r + rng.random_range(1..=3)));
        }
    }

    fn lose_all(&mut self, holders: &Mutex<BTreeMap<JobId, usize>>, tally: &Mutex<Tally>) {
        let mut h = holders.lock().unwrap();
        let mut t = tally.lock().unwrap();
        for (job, _) in self.held.drain(..) {
            if h.get(&job) == Some(&self.id) {
                h.remove(&job);
            }
            t.lease_losses += 1;
        }
    }
}

/// Runs the contention experiment and returns the final job census.
pub fn run_lease_stress(cfg: &StressConfig) -> StressReport {
    let clock = Arc::new(ManualClock::new(Timestamp::ZERO));
    let svc = Arc::new(Service::in_memory(StoreConfig { lease_ttl_secs: cfg.lease_ttl, max_retries: 3 }, clock.clone()));
    let user = svc.register_user("stress", "stress").expect("fresh store").user_id;
    let api: Arc<dyn Api> = Arc::new(LocalApi::new(svc.clone(), user));
    let site = api
        .register_site(&RegisterSite { hostname: "stress".into(), path: "/stress".into() })
        .expect("site")
        .site_id;
    let app = AppSpec { name: "noop".into(), command_template: "true".into(), ..Default::default() };
    let app_id = api.sync_apps(site, &[app]).expect("app")[0];
    let drafts: Vec<JobDraft> = (0..cfg.jobs)
        .map(|n| JobDraft { app_id, workdir: format!("noop/{n}"), ..Default::default() })
        .collect();
    let submitted = api.create_jobs(&drafts).expect("jobs").len();

    let holders = Mutex::new(BTreeMap::new());
    let tally = Mutex::new(Tally::default());
    let barrier = Barrier::new(cfg.workers + 1);
    let total = cfg.rounds + cfg.drain_rounds;
    // A crashed worker stays silent for longer than one lease.
    let down_rounds = (cfg.lease_ttl / cfg.round_secs).ceil() as usize + 2;
    let remaining = |api: &Arc<dyn Api>| {
        let states = JobState::ALL.into_iter().filter(|s| !s.is_terminal()).collect();
        api.count_jobs(&JobFilter { states, ..Default::default() }).unwrap_or(usize::MAX)
    };
    let stop = Mutex::new(false);
    let mut rounds_run = 0;

    thread::scope(|s| {
        for w in 0..cfg.workers {
            let (api, holders, tally, barrier, stop) = (api.clone(), &holders, &tally, &barrier, &stop);
            s.spawn(move || {
                let mut rng = substream(cfg.seed, &format!("stress:{w}"));
                let mut worker = Worker { id: w, api, site, session: None, held: Vec::new(), down_until: 0 };
                for r in 0..total {
                    barrier.wait();
                    if *stop.lock().unwrap() {
                        break;
                    }
                    worker.round(r, r < cfg.rounds, cfg.crash_probability, &mut rng, holders, tally, down_rounds);
                    barrier.wait();
                }
            });
        }
        for r in 0..total {
            let done = r >= cfg.rounds && remaining(&api) == 0;
            *stop.lock().unwrap() = done;
            barrier.wait();
            if done {
                break;
            }
            barrier.wait();
            rounds_run += 1;
            clock.advance_secs(cfg.round_secs);
            svc.expire_stale_sessions();
        }
    });

    let mut census = BTreeMap::new();
    for st in JobState::ALL {
        let n = api.count_jobs(&JobFilter { states: vec![st], ..Default::default() }).unwrap_or(0);
        if n > 0 {
            census.insert(st, n);
        }
    }
    let t = tally.into_inner().unwrap();
    StressReport {
        submitted,
        census,
        overlaps: t.overlaps,
        crashes: t.crashes,
        lease_losses: t.lease_losses,
        completions: t.completions,
        rounds_run,
    }
}
