//! The authoritative in-memory store.
//!
//! Every mutation goes through [`State::execute`], which is also what log
//! replay calls, so a replayed store is identical to the original. All maps
//! that influence output order are ordered maps.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use conduit_core::state::after_run_error;
use conduit_core::{
    apply_event, readiness_state, render_command, resolve_transfer_slots, AppId, AppSpec, BatchJobId, BatchJobRecord,
    BatchJobState, Direction, EventData, EventId, EventRecord, JobDraft, JobId, JobRecord, JobState, NodePool,
    SessionId, SessionRecord, SiteId, SiteRecord, Timestamp, TransferItemId, TransferItemRecord, TransferItemState,
    UserId, UserRecord,
};
use serde::{Deserialize, Serialize};

use crate::command::{Command, Reply};
use crate::error::{ApiError, ApiResult, ErrorKind};
use crate::types::*;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoreConfig {
    /// Seconds without a heartbeat after which a session is expired.
    pub lease_ttl_secs: f64,
    /// RUN_ERROR retries before a job is marked FAILED.
    pub max_retries: u32,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig { lease_ttl_secs: 60.0, max_retries: 3 }
    }
}

/// Ordering key of the per-site acquisition index: restarts first, then
/// oldest readiness time, then creation order.
type AcqKey = (u8, Timestamp, JobId);

fn acq_key(state: JobState, ready_at: Timestamp, job: JobId) -> AcqKey {
    (if state == JobState::RestartReady { 0 } else { 1 }, ready_at, job)
}

#[derive(Debug, Clone)]
struct UserEntry {
    record: UserRecord,
    credential: String,
}

#[derive(Debug, Clone)]
struct JobEntry {
    rec: JobRecord,
    owner: UserId,
    ready_at: Timestamp,
    children: Vec<JobId>,
    items: Vec<TransferItemId>,
    events: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
struct SiteIndex {
    jobs: BTreeSet<JobId>,
    counts: BTreeMap<JobState, usize>,
    acquirable: BTreeSet<AcqKey>,
    open_items: BTreeSet<TransferItemId>,
}

#[derive(Debug, Clone, Copy, Default)]
struct Counters {
    user: u64,
    site: u64,
    app: u64,
    job: u64,
    session: u64,
    batchjob: u64,
    item: u64,
    event: u64,
}

/// Canonical dump of the whole store, used to compare a store against its
/// replayed copy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub users: Vec<UserRecord>,
    pub sites: Vec<SiteRecord>,
    pub apps: Vec<AppSpec>,
    pub jobs: Vec<JobRecord>,
    pub events: Vec<EventRecord>,
    pub items: Vec<TransferItemRecord>,
    pub batchjobs: Vec<BatchJobRecord>,
    pub sessions: Vec<SessionRecord>,
}

#[derive(Debug, Clone, Default)]
pub struct State {
    cfg: StoreConfig,
    next: Counters,
    users: BTreeMap<UserId, UserEntry>,
    usernames: HashMap<String, UserId>,
    sites: BTreeMap<SiteId, SiteRecord>,
    site_keys: HashMap<(UserId, String, String), SiteId>,
    site_idx: HashMap<SiteId, SiteIndex>,
    apps: BTreeMap<AppId, AppSpec>,
    app_keys: HashMap<(SiteId, String), AppId>,
    jobs: BTreeMap<JobId, JobEntry>,
    events: Vec<EventRecord>,
    items: BTreeMap<TransferItemId, TransferItemRecord>,
    batchjobs: BTreeMap<BatchJobId, BatchJobRecord>,
    sessions: BTreeMap<SessionId, SessionRecord>,
}

fn err(code: ErrorKind, msg: impl Into<String>) -> ApiError {
    ApiError::new(code, msg)
}

impl State {
    pub fn new(cfg: StoreConfig) -> Self {
        State { cfg, ..Default::default() }
    }

    pub fn config(&self) -> StoreConfig {
        self.cfg
    }

    pub fn execute(&mut self, now: Timestamp, cmd: Command) -> ApiResult<Reply> {
        match cmd {
            Command::RegisterUser { username, credential } => self.register_user(username, credential).map(Reply::User),
            Command::RegisterSite { user, req } => self.register_site(user, req, now).map(Reply::Site),
            Command::SyncApps { user, site_id, apps } => self.sync_apps(user, site_id, apps).map(Reply::AppIds),
            Command::CreateJobs { user, drafts } => self.create_jobs(user, drafts, now).map(Reply::Jobs),
            Command::UpdateJobs { user, updates } => Ok(Reply::Updated(self.update_jobs(user, updates, now))),
            Command::UpdateTransfers { user, updates } => {
                self.update_transfers(user, updates, now).map(Reply::Transfers)
            }
            Command::CreateSession { user, req } => self.create_session(user, req, now).map(Reply::Session),
            Command::Acquire { user, session_id, req } => self.acquire(user, session_id, req, now).map(Reply::Jobs),
            Command::Heartbeat { user, session_id } => self.heartbeat(user, session_id, now).map(Reply::Heartbeat),
            Command::DeleteSession { user, session_id } => {
                self.delete_session(user, session_id, now).map(Reply::Expiry)
            }
            Command::ExpireSessions => Ok(Reply::Expiry(self.expire_sessions(now))),
            Command::CreateBatchJob { user, req } => self.create_batchjob(user, req).map(Reply::BatchJob),
            Command::PatchBatchJob { user, req } => self.patch_batchjob(user, req, now).map(Reply::BatchJob),
        }
    }

    // ---- users and sites ----

    fn register_user(&mut self, username: String, credential: String) -> ApiResult<UserRecord> {
        if username.is_empty() {
            return Err(err(ErrorKind::Validation, "username must not be empty"));
        }
        if self.usernames.contains_key(&username) {
            return Err(err(ErrorKind::Conflict, format!("user `{username}` already exists")));
        }
        self.next.user += 1;
        let record = UserRecord { user_id: UserId(self.next.user), username: username.clone() };
        self.usernames.insert(username, record.user_id);
        self.users.insert(record.user_id, UserEntry { record: record.clone(), credential });
        Ok(record)
    }

    /// The user id for a username whose stored credential equals `credential`.
    pub fn check_credential(&self, username: &str, credential: &str) -> ApiResult<UserId> {
        self.usernames
            .get(username)
            .and_then(|id| self.users.get(id))
            .filter(|u| u.credential == credential)
            .map(|u| u.record.user_id)
            .ok_or_else(|| err(ErrorKind::AuthFailed, "unknown user or wrong password"))
    }

    pub fn user_exists(&self, user: UserId) -> bool {
        self.users.contains_key(&user)
    }

    fn owned_site(&self, user: UserId, site: SiteId) -> ApiResult<&SiteRecord> {
        let s = self.sites.get(&site).ok_or_else(|| ApiError::not_found(format!("site {site}")))?;
        if s.owner != user {
            return Err(err(ErrorKind::ForeignSite, format!("site {site} belongs to another user")));
        }
        Ok(s)
    }

    fn register_site(&mut self, user: UserId, req: RegisterSite, now: Timestamp) -> ApiResult<SiteRecord> {
        if req.hostname.is_empty() || req.path.is_empty() {
            return Err(err(ErrorKind::Validation, "hostname and path are required"));
        }
        let key = (user, req.hostname.clone(), req.path.clone());
        if let Some(id) = self.site_keys.get(&key) {
            return Err(err(ErrorKind::DuplicateSite, format!("site already registered as {id}"))
                .with_detail(serde_json::json!({ "site_id": id })));
        }
        self.next.site += 1;
        let rec = SiteRecord {
            site_id: SiteId(self.next.site),
            owner: user,
            hostname: req.hostname,
            path: req.path,
            last_refresh: now,
        };
        self.site_keys.insert(key, rec.site_id);
        self.sites.insert(rec.site_id, rec.clone());
        self.site_idx.insert(rec.site_id, SiteIndex::default());
        Ok(rec)
    }

    pub fn list_sites(&self, user: UserId) -> Vec<SiteRecord> {
        self.sites.values().filter(|s| s.owner == user).cloned().collect()
    }

    fn sync_apps(&mut self, user: UserId, site: SiteId, apps: Vec<AppSpec>) -> ApiResult<Vec<AppId>> {
        self.owned_site(user, site)?;
        let mut names = BTreeSet::new();
        for app in &apps {
            app.validate()?;
            if !names.insert(app.name.as_str()) {
                return Err(err(ErrorKind::Validation, format!("app `{}` listed twice", app.name)));
            }
        }
        let mut ids = Vec::with_capacity(apps.len());
        for mut app in apps {
            let key = (site, app.name.clone());
            let id = match self.app_keys.get(&key) {
                Some(&id) => id,
                None => {
                    self.next.app += 1;
                    AppId(self.next.app)
                }
            };
            app.app_id = id;
            app.site_id = site;
            self.app_keys.insert(key, id);
            self.apps.insert(id, app);
            ids.push(id);
        }
        Ok(ids)
    }

    pub fn list_apps(&self, user: UserId, site: Option<SiteId>) -> Vec<AppSpec> {
        self.apps
            .values()
            .filter(|a| site.is_none_or(|s| s == a.site_id))
            .filter(|a| self.sites.get(&a.site_id).is_some_and(|s| s.owner == user))
            .cloned()
            .collect()
    }

    // ---- jobs ----

    fn create_jobs(&mut self, user: UserId, drafts: Vec<JobDraft>, now: Timestamp) -> ApiResult<Vec<JobRecord>> {
        let n = drafts.len();
        let mut resolved_items = Vec::with_capacity(n);
        for (i, d) in drafts.iter().enumerate() {
            let at = |e: ApiError| e.with_detail(serde_json::json!({ "index": i }));
            let app = self
                .apps
                .get(&d.app_id)
                .ok_or_else(|| at(err(ErrorKind::UnknownApp, format!("app {} does not exist", d.app_id))))?;
            self.owned_site(user, app.site_id).map_err(at)?;
            render_command(app, &d.parameters).map_err(|e| at(e.into()))?;
            d.resources.validate().map_err(|e| at(e.into()))?;
            let mut items = resolve_transfer_slots(app, &d.transfer_bindings).map_err(|e| at(e.into()))?;
            for it in &mut items {
                it.bytes = d.transfer_bytes.get(&it.slot).copied().unwrap_or(0);
                if !d.workdir.is_empty() {
                    it.local_path = format!("{}/{}", d.workdir.trim_end_matches('/'), it.local_path);
                }
            }
            resolved_items.push(items);
            for p in &d.parent_ids {
                let parent = self.jobs.get(p).ok_or_else(|| at(ApiError::not_found(format!("parent job {p}"))))?;
                if parent.owner != user {
                    return Err(at(err(ErrorKind::Forbidden, format!("parent job {p} belongs to another user"))));
                }
            }
            if let Some(&bad) = d.parent_drafts.iter().find(|&&p| p >= n) {
                return Err(at(err(ErrorKind::Validation, format!("parent index {bad} out of range"))));
            }
        }
        let order = topo_order(&drafts).ok_or_else(|| err(ErrorKind::CyclicDependency, "dependency cycle in request"))?;

        let base = self.next.job;
        self.next.job += n as u64;
        let id_of = |i: usize| JobId(base + 1 + i as u64);
        for (i, (d, items)) in drafts.into_iter().zip(resolved_items).enumerate() {
            let job_id = id_of(i);
            let site = self.apps[&d.app_id].site_id;
            let mut parents = d.parent_ids;
            parents.extend(d.parent_drafts.iter().map(|&p| id_of(p)));
            parents.sort();
            parents.dedup();
            let mut rec = JobRecord::new(job_id, d.app_id, site, d.workdir);
            rec.parameters = d.parameters;
            rec.resources = d.resources;
            rec.tags = d.tags;
            rec.transfer_bindings = d.transfer_bindings;
            rec.parent_ids = parents.clone();
            let mut item_ids = Vec::with_capacity(items.len());
            for mut it in items {
                self.next.item += 1;
                it.item_id = TransferItemId(self.next.item);
                it.job_id = job_id;
                item_ids.push(it.item_id);
                self.site_idx.entry(site).or_default().open_items.insert(it.item_id);
                self.items.insert(it.item_id, it);
            }
            for p in &parents {
                if let Some(pe) = self.jobs.get_mut(p) {
                    pe.children.push(job_id);
                }
            }
            let idx = self.site_idx.entry(site).or_default();
            idx.jobs.insert(job_id);
            *idx.counts.entry(JobState::Created).or_default() += 1;
            self.jobs.insert(
                job_id,
                JobEntry { rec, owner: user, ready_at: now, children: Vec::new(), items: item_ids, events: Vec::new() },
            );
        }
        // Wire up in-batch children registered before their parent existed.
        for i in 0..n {
            let id = id_of(i);
            let parents = self.jobs[&id].rec.parent_ids.clone();
            for p in parents.into_iter().filter(|p| p.0 > base) {
                let pe = self.jobs.get_mut(&p).expect("in-batch parent");
                if !pe.children.contains(&id) {
                    pe.children.push(id);
                }
            }
        }
        for i in order {
            let id = id_of(i);
            let parent_states: Vec<JobState> =
                self.jobs[&id].rec.parent_ids.iter().map(|p| self.jobs[p].rec.state).collect();
            let mut sink = Vec::new();
            match readiness_state(&parent_states) {
                JobState::Ready => self.transition(id, JobState::Ready, now, EventData::new(), &mut sink)?,
                JobState::Failed => {
                    self.transition(id, JobState::AwaitingParents, now, EventData::new(), &mut sink)?;
                    self.transition(id, JobState::Failed, now, reason("parent failed"), &mut sink)?;
                }
                _ => self.transition(id, JobState::AwaitingParents, now, EventData::new(), &mut sink)?,
            }
        }
        Ok((0..n).map(|i| self.jobs[&id_of(i)].rec.clone()).collect())
    }

    /// Applies `to` to one job and then every automatic follow-up it implies,
    /// appending all produced events to `out`.
    fn transition(
        &mut self,
        job: JobId,
        to: JobState,
        ts: Timestamp,
        data: EventData,
        out: &mut Vec<EventRecord>,
    ) -> ApiResult<()> {
        self.apply_one(job, to, ts, data, out)?;
        let mut work = VecDeque::from([job]);
        while let Some(j) = work.pop_front() {
            for (next_job, next_state, data) in self.follow_ups(j) {
                let t = self.jobs[&next_job].rec.last_event_at.map_or(ts, |l| l.max(ts));
                if self.apply_one(next_job, next_state, t, data, out).is_ok() {
                    work.push_back(next_job);
                }
            }
        }
        Ok(())
    }

    fn follow_ups(&self, job: JobId) -> Vec<(JobId, JobState, EventData)> {
        let e = &self.jobs[&job];
        match e.rec.state {
            JobState::Ready if self.items_done(e, Direction::In) => vec![(job, JobState::StagedIn, EventData::new())],
            JobState::RunDone if self.items_done(e, Direction::Out) => {
                vec![(job, JobState::Finished, EventData::new())]
            }
            JobState::RunError => {
                vec![(job, after_run_error(e.rec.retry_count, self.cfg.max_retries), EventData::new())]
            }
            JobState::RunTimeout => vec![(job, JobState::RestartReady, EventData::new())],
            JobState::Finished | JobState::Failed => e
                .children
                .iter()
                .filter(|c| self.jobs[*c].rec.state == JobState::AwaitingParents)
                .filter_map(|c| {
                    let states: Vec<JobState> =
                        self.jobs[c].rec.parent_ids.iter().map(|p| self.jobs[p].rec.state).collect();
                    match readiness_state(&states) {
                        JobState::Ready => Some((*c, JobState::Ready, EventData::new())),
                        JobState::Failed => Some((*c, JobState::Failed, reason("parent failed"))),
                        _ => None,
                    }
                })
                .collect(),
            _ => Vec::new(),
        }
    }

    fn items_done(&self, e: &JobEntry, dir: Direction) -> bool {
        e.items
            .iter()
            .map(|i| &self.items[i])
            .filter(|i| i.direction == dir)
            .all(|i| i.state == TransferItemState::Done)
    }

    fn apply_one(
        &mut self,
        job: JobId,
        to: JobState,
        ts: Timestamp,
        data: EventData,
        out: &mut Vec<EventRecord>,
    ) -> ApiResult<()> {
        let entry = self.jobs.get_mut(&job).ok_or_else(|| ApiError::not_found(format!("job {job}")))?;
        let from = entry.rec.state;
        let mut ev = apply_event(&mut entry.rec, to, ts, data)?;
        if from == JobState::RunError && to == JobState::RestartReady {
            entry.rec.retry_count += 1;
        }
        let idx = self.site_idx.entry(entry.rec.site_id).or_default();
        if let Some(c) = idx.counts.get_mut(&from) {
            *c -= 1;
            if *c == 0 {
                idx.counts.remove(&from);
            }
        }
        *idx.counts.entry(to).or_default() += 1;
        if from.is_acquirable() {
            idx.acquirable.remove(&acq_key(from, entry.ready_at, job));
        }
        if to.is_acquirable() {
            entry.ready_at = ts;
            if entry.rec.session_id.is_none() {
                idx.acquirable.insert(acq_key(to, ts, job));
            }
        }
        if from == JobState::Running {
            if let Some(sid) = entry.rec.session_id.take() {
                if let Some(s) = self.sessions.get_mut(&sid) {
                    s.acquired_job_ids.remove(&job);
                }
            }
        }
        self.next.event += 1;
        ev.event_id = EventId(self.next.event);
        entry.events.push(self.events.len());
        self.events.push(ev.clone());
        out.push(ev);
        Ok(())
    }

    fn owned_job(&self, user: UserId, job: JobId) -> ApiResult<&JobEntry> {
        let e = self.jobs.get(&job).ok_or_else(|| ApiError::not_found(format!("job {job}")))?;
        if e.owner != user {
            return Err(err(ErrorKind::Forbidden, format!("job {job} belongs to another user")));
        }
        Ok(e)
    }

    fn update_jobs(&mut self, user: UserId, updates: Vec<JobUpdate>, now: Timestamp) -> UpdateOutcome {
        let mut outcome = UpdateOutcome::default();
        self.expire_sessions_inner(now);
        for u in updates {
            let job_id = u.job_id;
            if let Err(e) = self.update_one(user, u, now, &mut outcome.events) {
                outcome.errors.push(ItemError { job_id, code: e.code, message: e.message });
            }
        }
        outcome
    }

    fn update_one(&mut self, user: UserId, u: JobUpdate, now: Timestamp, out: &mut Vec<EventRecord>) -> ApiResult<()> {
        let e = self.owned_job(user, u.job_id)?;
        if let Some(sid) = u.session_id {
            if e.rec.session_id != Some(sid) {
                return Err(err(ErrorKind::LeaseLost, format!("job {} is not leased by session {sid}", u.job_id)));
            }
        }
        let ts = u.timestamp.unwrap_or(now);
        if let Some(to) = u.state {
            if !conduit_core::validate_transition(e.rec.state, to) {
                return Err(conduit_core::ModelError::InvalidTransition { from: e.rec.state, to }.into());
            }
            if let Some(last) = e.rec.last_event_at.filter(|&l| ts < l) {
                return Err(conduit_core::ModelError::NonMonotonicTimestamp { last: last.0, got: ts.0 }.into());
            }
        }
        if u.parameters.is_some() && !matches!(e.rec.state, JobState::Created | JobState::AwaitingParents | JobState::Ready | JobState::StagedIn | JobState::RestartReady) {
            return Err(err(ErrorKind::Conflict, "parameters cannot change once a job has started"));
        }
        if let Some(p) = &u.parameters {
            let app = &self.apps[&e.rec.app_id];
            render_command(app, p)?;
        }
        let e = self.jobs.get_mut(&u.job_id).expect("checked");
        if let Some(tags) = u.tags {
            e.rec.tags = tags;
        }
        if let Some(p) = u.parameters {
            e.rec.parameters = p;
        }
        if let Some(to) = u.state {
            self.transition(u.job_id, to, ts, u.data, out)?;
        }
        Ok(())
    }

    fn visible_jobs<'a>(&'a self, user: UserId, f: &'a JobFilter) -> Box<dyn Iterator<Item = &'a JobEntry> + 'a> {
        let base: Box<dyn Iterator<Item = &JobEntry>> = if !f.job_ids.is_empty() {
            let ids: BTreeSet<&JobId> = f.job_ids.iter().collect();
            Box::new(ids.into_iter().filter_map(|id| self.jobs.get(id)))
        } else if let Some(site) = f.site_id {
            match self.site_idx.get(&site) {
                Some(idx) => Box::new(idx.jobs.iter().map(|id| &self.jobs[id])),
                None => Box::new(std::iter::empty()),
            }
        } else {
            Box::new(self.jobs.values())
        };
        Box::new(base.filter(move |e| e.owner == user && f.matches(&e.rec)))
    }

    pub fn query_jobs(&self, user: UserId, q: &JobQuery) -> Vec<JobRecord> {
        let mut hits: Vec<&JobRecord> = self.visible_jobs(user, &q.filter).map(|e| &e.rec).collect();
        match q.ordering {
            Ordering::JobId => hits.sort_by_key(|j| j.job_id),
            Ordering::JobIdDesc => hits.sort_by_key(|j| std::cmp::Reverse(j.job_id)),
            Ordering::LastUpdate => hits.sort_by_key(|j| (j.last_event_at, j.job_id)),
            Ordering::LastUpdateDesc => hits.sort_by_key(|j| std::cmp::Reverse((j.last_event_at, j.job_id))),
        }
        hits.into_iter().skip(q.page.offset).take(q.page.limit).cloned().collect()
    }

    pub fn count_jobs(&self, user: UserId, f: &JobFilter) -> usize {
        self.visible_jobs(user, f).count()
    }

    // ---- sessions and leases ----

    fn create_session(&mut self, user: UserId, req: CreateSession, now: Timestamp) -> ApiResult<SessionRecord> {
        self.owned_site(user, req.site_id)?;
        if let Some(b) = req.batchjob_id {
            let bj = self.batchjobs.get(&b).ok_or_else(|| ApiError::not_found(format!("batch job {b}")))?;
            if bj.site_id != req.site_id {
                return Err(err(ErrorKind::Validation, format!("batch job {b} belongs to another site")));
            }
        }
        self.next.session += 1;
        let rec = SessionRecord {
            session_id: SessionId(self.next.session),
            site_id: req.site_id,
            batchjob_id: req.batchjob_id,
            heartbeat: now,
            acquired_job_ids: BTreeSet::new(),
        };
        self.sessions.insert(rec.session_id, rec.clone());
        Ok(rec)
    }

    fn live_session(&mut self, user: UserId, sid: SessionId, now: Timestamp) -> ApiResult<&mut SessionRecord> {
        self.expire_sessions_inner(now);
        let known = sid.0 >= 1 && sid.0 <= self.next.session;
        let site = match self.sessions.get(&sid) {
            Some(s) => s.site_id,
            None if known => return Err(err(ErrorKind::SessionExpired, format!("session {sid} has expired"))),
            None => return Err(err(ErrorKind::UnknownSession, format!("session {sid} does not exist"))),
        };
        self.owned_site(user, site)?;
        let s = self.sessions.get_mut(&sid).expect("present");
        s.heartbeat = now;
        Ok(s)
    }

    fn heartbeat(&mut self, user: UserId, sid: SessionId, now: Timestamp) -> ApiResult<Timestamp> {
        self.live_session(user, sid, now).map(|s| s.heartbeat)
    }

    fn acquire(&mut self, user: UserId, sid: SessionId, req: AcquireRequest, now: Timestamp) -> ApiResult<Vec<JobRecord>> {
        let site = self.live_session(user, sid, now)?.site_id;
        let mut pool = NodePool::from_nodes(req.available, u32::MAX);
        let mut chosen = Vec::new();
        if let Some(idx) = self.site_idx.get(&site) {
            for key in &idx.acquirable {
                if chosen.len() >= req.max_num_jobs || !pool.has_free_capacity() {
                    break;
                }
                let rec = &self.jobs[&key.2].rec;
                if !req.states.contains(&rec.state) {
                    continue;
                }
                if pool.try_place(rec.job_id, &rec.resources).is_some() {
                    chosen.push(*key);
                }
            }
        }
        let idx = self.site_idx.get_mut(&site).expect("site index");
        let session = self.sessions.get_mut(&sid).expect("live session");
        let mut out = Vec::with_capacity(chosen.len());
        for key in chosen {
            idx.acquirable.remove(&key);
            let e = self.jobs.get_mut(&key.2).expect("indexed job");
            e.rec.session_id = Some(sid);
            session.acquired_job_ids.insert(key.2);
            out.push(e.rec.clone());
        }
        Ok(out)
    }

    fn delete_session(&mut self, user: UserId, sid: SessionId, now: Timestamp) -> ApiResult<ExpiryReport> {
        self.live_session(user, sid, now)?;
        let mut report = ExpiryReport::default();
        self.end_session(sid, now, "session ended", &mut report, &mut Vec::new());
        Ok(report)
    }

    fn end_session(&mut self, sid: SessionId, now: Timestamp, why: &str, report: &mut ExpiryReport, out: &mut Vec<EventRecord>) {
        let Some(session) = self.sessions.remove(&sid) else { return };
        for job in session.acquired_job_ids {
            let Some(e) = self.jobs.get_mut(&job) else { continue };
            if e.rec.session_id != Some(sid) {
                continue;
            }
            if e.rec.state == JobState::Running {
                let ts = e.rec.last_event_at.map_or(now, |l| l.max(now));
                if self.transition(job, JobState::RunTimeout, ts, reason(why), out).is_ok() {
                    report.reset.push(job);
                }
            } else {
                e.rec.session_id = None;
                if e.rec.state.is_acquirable() {
                    let key = acq_key(e.rec.state, e.ready_at, job);
                    self.site_idx.entry(e.rec.site_id).or_default().acquirable.insert(key);
                }
                report.released.push(job);
            }
        }
    }

    fn expire_sessions_inner(&mut self, now: Timestamp) -> (ExpiryReport, Vec<EventRecord>) {
        let ttl = (self.cfg.lease_ttl_secs * 1e6).round() as i64;
        let stale: Vec<SessionId> =
            self.sessions.values().filter(|s| now - s.heartbeat > ttl).map(|s| s.session_id).collect();
        let mut report = ExpiryReport::default();
        let mut events = Vec::new();
        for sid in stale {
            self.end_session(sid, now, "session expired", &mut report, &mut events);
        }
        (report, events)
    }

    fn expire_sessions(&mut self, now: Timestamp) -> ExpiryReport {
        self.expire_sessions_inner(now).0
    }

    pub fn sessions(&self, user: UserId, site: Option<SiteId>) -> Vec<SessionRecord> {
        self.sessions
            .values()
            .filter(|s| site.is_none_or(|x| x == s.site_id))
            .filter(|s| self.sites.get(&s.site_id).is_some_and(|x| x.owner == user))
            .cloned()
            .collect()
    }

    // ---- batch jobs ----

    fn create_batchjob(&mut self, user: UserId, req: CreateBatchJob) -> ApiResult<BatchJobRecord> {
        self.owned_site(user, req.site_id)?;
        if req.num_nodes == 0 || req.wall_time == 0 {
            return Err(err(ErrorKind::Validation, "num_nodes and wall_time must be positive"));
        }
        self.next.batchjob += 1;
        let rec = BatchJobRecord {
            batchjob_id: BatchJobId(self.next.batchjob),
            site_id: req.site_id,
            scheduler_id: None,
            num_nodes: req.num_nodes,
            wall_time: req.wall_time,
            queue: req.queue,
            project: req.project,
            job_mode: req.job_mode,
            state: BatchJobState::PendingSubmission,
            queued_at: None,
        };
        self.batchjobs.insert(rec.batchjob_id, rec.clone());
        Ok(rec)
    }

    fn patch_batchjob(&mut self, user: UserId, req: PatchBatchJob, now: Timestamp) -> ApiResult<BatchJobRecord> {
        let b = self
            .batchjobs
            .get(&req.batchjob_id)
            .ok_or_else(|| ApiError::not_found(format!("batch job {}", req.batchjob_id)))?;
        self.owned_site(user, b.site_id)?;
        let to = req.state.unwrap_or(b.state);
        if to != b.state && !b.state.can_move_to(to) {
            return Err(err(ErrorKind::InvalidBatchJobTransition, format!("{:?} -> {:?}", b.state, to)));
        }
        let sched = req.scheduler_id.clone().or_else(|| b.scheduler_id.clone());
        if to.requires_scheduler_id() && sched.is_none() {
            return Err(err(ErrorKind::InvalidBatchJobTransition, format!("{to:?} requires a scheduler id")));
        }
        let b = self.batchjobs.get_mut(&req.batchjob_id).expect("checked");
        if to == BatchJobState::Queued && b.state != BatchJobState::Queued {
            b.queued_at = Some(now);
        }
        b.state = to;
        b.scheduler_id = sched;
        Ok(b.clone())
    }

    pub fn list_batchjobs(&self, user: UserId, f: &BatchJobFilter) -> Vec<BatchJobRecord> {
        self.batchjobs
            .values()
            .filter(|b| f.matches(b))
            .filter(|b| self.sites.get(&b.site_id).is_some_and(|s| s.owner == user))
            .cloned()
            .collect()
    }

    // ---- transfers ----

    pub fn list_transfers(&self, user: UserId, f: &TransferFilter) -> ApiResult<Vec<TransferItemRecord>> {
        self.owned_site(user, f.site_id)?;
        let Some(idx) = self.site_idx.get(&f.site_id) else { return Ok(Vec::new()) };
        let open = matches!(f.state, Some(TransferItemState::Pending | TransferItemState::Active));
        let candidates: Box<dyn Iterator<Item = &TransferItemRecord>> = if open {
            Box::new(idx.open_items.iter().map(|i| &self.items[i]))
        } else {
            Box::new(idx.jobs.iter().flat_map(|j| self.jobs[j].items.iter().map(|i| &self.items[i])))
        };
        Ok(candidates
            .filter(|it| f.state.is_none_or(|s| s == it.state))
            .filter(|it| f.direction.is_none_or(|d| d == it.direction))
            .filter(|it| {
                it.state != TransferItemState::Pending || {
                    let st = self.jobs[&it.job_id].rec.state;
                    match it.direction {
                        Direction::In => st == JobState::Ready,
                        Direction::Out => st == JobState::RunDone,
                    }
                }
            })
            .cloned()
            .collect())
    }

    fn update_transfers(
        &mut self,
        user: UserId,
        updates: Vec<TransferUpdate>,
        now: Timestamp,
    ) -> ApiResult<TransferUpdateResult> {
        for u in &updates {
            let it = self.items.get(&u.item_id).ok_or_else(|| ApiError::not_found(format!("transfer item {}", u.item_id)))?;
            self.owned_job(user, it.job_id)?;
            if u.state != it.state && !it.state.can_move_to(u.state) {
                return Err(err(ErrorKind::InvalidItemState, format!("item {}: {:?} -> {:?}", u.item_id, it.state, u.state)));
            }
            if u.state == TransferItemState::Done && u.task_ref.is_none() && it.task_ref.is_none() {
                return Err(err(ErrorKind::InvalidItemState, format!("item {} cannot be DONE without a task reference", u.item_id)));
            }
        }
        let mut jobs = BTreeSet::new();
        let n = updates.len();
        for u in updates {
            let it = self.items.get_mut(&u.item_id).expect("validated");
            it.state = u.state;
            if u.task_ref.is_some() {
                it.task_ref = u.task_ref;
            }
            if let Some(a) = u.attempts {
                it.attempts = a;
            }
            let (job, terminal) = (it.job_id, matches!(u.state, TransferItemState::Done | TransferItemState::Error));
            if terminal {
                let site = self.jobs[&job].rec.site_id;
                self.site_idx.entry(site).or_default().open_items.remove(&u.item_id);
            }
            jobs.insert(job);
        }
        let mut events = Vec::new();
        for job in jobs {
            let e = &self.jobs[&job];
            let next = match e.rec.state {
                JobState::Ready if self.items_done(e, Direction::In) => JobState::StagedIn,
                JobState::RunDone if self.items_done(e, Direction::Out) => JobState::Finished,
                _ => continue,
            };
            let ts = e.rec.last_event_at.map_or(now, |l| l.max(now));
            self.transition(job, next, ts, EventData::new(), &mut events)?;
        }
        Ok(TransferUpdateResult { updated: n, events })
    }

    // ---- read models ----

    pub fn backlog(&self, user: UserId, site: SiteId) -> ApiResult<BacklogSummary> {
        self.owned_site(user, site)?;
        let idx = self.site_idx.get(&site).cloned().unwrap_or_default();
        Ok(BacklogSummary {
            site_id: site,
            pending_total: idx.counts.iter().filter(|(s, _)| s.is_pending()).map(|(_, c)| c).sum(),
            runnable_total: idx.acquirable.len(),
            counts: idx.counts,
        })
    }

    pub fn query_events(&self, user: UserId, f: &EventFilter) -> Vec<EventRecord> {
        let job_ok = |j: &JobEntry| {
            j.owner == user
                && f.site_id.is_none_or(|s| s == j.rec.site_id)
                && f.tags.iter().all(|(k, v)| j.rec.tags.get(k) == Some(v))
        };
        let mut out: Vec<EventRecord> = if !f.job_ids.is_empty() {
            f.job_ids
                .iter()
                .filter_map(|id| self.jobs.get(id))
                .filter(|j| job_ok(j))
                .flat_map(|j| j.events.iter().map(|&i| &self.events[i]))
                .filter(|e| f.matches_event(e))
                .cloned()
                .collect()
        } else {
            self.events
                .iter()
                .filter(|e| f.matches_event(e) && job_ok(&self.jobs[&e.job_id]))
                .cloned()
                .collect()
        };
        out.sort_by_key(|e| (e.timestamp, e.event_id));
        out
    }

    pub fn job_events(&self, job: JobId) -> Vec<EventRecord> {
        self.jobs.get(&job).map_or_else(Vec::new, |j| j.events.iter().map(|&i| self.events[i].clone()).collect())
    }

    pub fn all_events(&self) -> &[EventRecord] {
        &self.events
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            users: self.users.values().map(|u| u.record.clone()).collect(),
            sites: self.sites.values().cloned().collect(),
            apps: self.apps.values().cloned().collect(),
            jobs: self.jobs.values().map(|j| j.rec.clone()).collect(),
            events: self.events.clone(),
            items: self.items.values().cloned().collect(),
            batchjobs: self.batchjobs.values().cloned().collect(),
            sessions: self.sessions.values().cloned().collect(),
        }
    }
}

fn reason(why: &str) -> EventData {
    EventData::from([("reason".to_string(), why.to_string())])
}

/// Kahn order over in-request parents; `None` when they form a cycle.
fn topo_order(drafts: &[JobDraft]) -> Option<Vec<usize>> {
    let n = drafts.len();
    let mut indeg = vec![0usize; n];
    let mut children = vec![Vec::new(); n];
    for (i, d) in drafts.iter().enumerate() {
        let mut ps = d.parent_drafts.clone();
        ps.sort_unstable();
        ps.dedup();
        for p in ps {
            indeg[i] += 1;
            children[p].push(i);
        }
    }
    let mut queue: VecDeque<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(i) = queue.pop_front() {
        order.push(i);
        for &c in &children[i] {
            indeg[c] -= 1;
            if indeg[c] == 0 {
                queue.push_back(c);
            }
        }
    }
    (order.len() == n).then_some(order)
}
