use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};

use conduit_core::{
    AppId, AppSpec, BatchJobRecord, Clock, EventRecord, JobDraft, JobRecord, SessionId, SessionRecord, SiteId,
    SiteRecord, SystemClock, Timestamp, TransferItemRecord, UserId, UserRecord,
};

use crate::auth::{hash_credential, TokenSigner};
use crate::command::{Command, LogEntry, Reply};
use crate::error::{ApiError, ApiResult, ErrorKind};
use crate::store::{Snapshot, State, StoreConfig};
use crate::types::*;
use crate::wal::Wal;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub store: StoreConfig,
    pub token_ttl_secs: f64,
    pub signing_key: Vec<u8>,
    /// Command log location; `None` keeps everything in memory.
    pub wal_path: Option<PathBuf>,
    pub fsync: bool,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            store: StoreConfig::default(),
            token_ttl_secs: 24.0 * 3600.0,
            signing_key: b"conduit-dev-key".to_vec(),
            wal_path: None,
            fsync: true,
        }
    }
}

struct Inner {
    state: State,
    wal: Option<Wal>,
}

/// The service proper. Operations take the already authenticated user id;
/// [`crate::api::LocalApi`] and the HTTP layer bind a token to a user.
pub struct Service {
    inner: Mutex<Inner>,
    clock: Arc<dyn Clock>,
    signer: TokenSigner,
}

macro_rules! expect_reply {
    ($r:expr, $v:ident) => {
        match $r? {
            Reply::$v(x) => Ok(x),
            other => unreachable!("unexpected reply {other:?}"),
        }
    };
}

impl Service {
    pub fn new(cfg: ServiceConfig, clock: Arc<dyn Clock>) -> std::io::Result<Self> {
        let mut state = State::new(cfg.store);
        let wal = match &cfg.wal_path {
            Some(p) => {
                let (wal, entries) = Wal::open(p, cfg.fsync)?;
                for e in entries {
                    // Failed commands fail the same way again; only the
                    // successful ones changed anything.
                    let _ = state.execute(e.now, e.cmd);
                }
                Some(wal)
            }
            None => None,
        };
        Ok(Service {
            inner: Mutex::new(Inner { state, wal }),
            clock,
            signer: TokenSigner::new(cfg.signing_key, cfg.token_ttl_secs),
        })
    }

    pub fn in_memory(store: StoreConfig, clock: Arc<dyn Clock>) -> Self {
        Service::new(ServiceConfig { store, ..Default::default() }, clock).expect("no log to open")
    }

    pub fn with_system_clock(cfg: ServiceConfig) -> std::io::Result<Self> {
        Service::new(cfg, Arc::new(SystemClock))
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    fn run(&self, cmd: Command) -> ApiResult<Reply> {
        let mut inner = self.lock();
        let now = self.clock.now();
        if let Some(wal) = inner.wal.as_mut() {
            let entry = LogEntry { now, cmd };
            wal.append(&entry)
                .map_err(|e| ApiError::new(ErrorKind::Unavailable, format!("command log write failed: {e}")))?;
            return inner.state.execute(now, entry.cmd);
        }
        inner.state.execute(now, cmd)
    }

    /// Read-only access to the store.
    pub fn read<T>(&self, f: impl FnOnce(&State) -> T) -> T {
        f(&self.lock().state)
    }

    pub fn snapshot(&self) -> Snapshot {
        self.read(State::snapshot)
    }

    // ---- auth ----

    pub fn register_user(&self, username: &str, password: &str) -> ApiResult<UserRecord> {
        let credential = hash_credential(username, password);
        expect_reply!(self.run(Command::RegisterUser { username: username.into(), credential }), User)
    }

    pub fn login(&self, req: &LoginRequest) -> ApiResult<AccessToken> {
        let user = self.read(|s| s.check_credential(&req.username, &hash_credential(&req.username, &req.password)))?;
        Ok(self.signer.issue(user, self.now()))
    }

    pub fn authenticate(&self, token: &str) -> ApiResult<UserId> {
        let user = self.signer.verify(token, self.now())?;
        if !self.read(|s| s.user_exists(user)) {
            return Err(ApiError::new(ErrorKind::AuthFailed, "token refers to an unknown user"));
        }
        Ok(user)
    }

    /// Issues a token without a password check, for embedding.
    pub fn issue_token(&self, user: UserId) -> AccessToken {
        self.signer.issue(user, self.now())
    }

    // ---- sites and apps ----

    pub fn register_site(&self, user: UserId, req: RegisterSite) -> ApiResult<SiteRecord> {
        expect_reply!(self.run(Command::RegisterSite { user, req }), Site)
    }

    pub fn list_sites(&self, user: UserId) -> Vec<SiteRecord> {
        self.read(|s| s.list_sites(user))
    }

    pub fn sync_apps(&self, user: UserId, site_id: SiteId, apps: Vec<AppSpec>) -> ApiResult<Vec<AppId>> {
        expect_reply!(self.run(Command::SyncApps { user, site_id, apps }), AppIds)
    }

    pub fn list_apps(&self, user: UserId, site: Option<SiteId>) -> Vec<AppSpec> {
        self.read(|s| s.list_apps(user, site))
    }

    // ---- jobs ----

    pub fn create_jobs(&self, user: UserId, drafts: Vec<JobDraft>) -> ApiResult<Vec<JobRecord>> {
        expect_reply!(self.run(Command::CreateJobs { user, drafts }), Jobs)
    }

    pub fn query_jobs(&self, user: UserId, q: &JobQuery) -> Vec<JobRecord> {
        self.read(|s| s.query_jobs(user, q))
    }

    pub fn count_jobs(&self, user: UserId, f: &JobFilter) -> usize {
        self.read(|s| s.count_jobs(user, f))
    }

    pub fn update_jobs(&self, user: UserId, updates: Vec<JobUpdate>) -> ApiResult<UpdateOutcome> {
        expect_reply!(self.run(Command::UpdateJobs { user, updates }), Updated)
    }

    // ---- sessions ----

    pub fn create_session(&self, user: UserId, req: CreateSession) -> ApiResult<SessionRecord> {
        expect_reply!(self.run(Command::CreateSession { user, req }), Session)
    }

    pub fn acquire(&self, user: UserId, session_id: SessionId, req: AcquireRequest) -> ApiResult<Vec<JobRecord>> {
        expect_reply!(self.run(Command::Acquire { user, session_id, req }), Jobs)
    }

    pub fn heartbeat(&self, user: UserId, session_id: SessionId) -> ApiResult<Timestamp> {
        expect_reply!(self.run(Command::Heartbeat { user, session_id }), Heartbeat)
    }

    pub fn delete_session(&self, user: UserId, session_id: SessionId) -> ApiResult<ExpiryReport> {
        expect_reply!(self.run(Command::DeleteSession { user, session_id }), Expiry)
    }

    /// Expires every session whose last heartbeat is older than the lease TTL.
    pub fn expire_stale_sessions(&self) -> ExpiryReport {
        match self.run(Command::ExpireSessions) {
            Ok(Reply::Expiry(r)) => r,
            _ => ExpiryReport::default(),
        }
    }

    pub fn list_sessions(&self, user: UserId, site: Option<SiteId>) -> Vec<SessionRecord> {
        self.read(|s| s.sessions(user, site))
    }

    // ---- batch jobs ----

    pub fn create_batchjob(&self, user: UserId, req: CreateBatchJob) -> ApiResult<BatchJobRecord> {
        expect_reply!(self.run(Command::CreateBatchJob { user, req }), BatchJob)
    }

    pub fn patch_batchjob(&self, user: UserId, req: PatchBatchJob) -> ApiResult<BatchJobRecord> {
        expect_reply!(self.run(Command::PatchBatchJob { user, req }), BatchJob)
    }

    pub fn list_batchjobs(&self, user: UserId, f: &BatchJobFilter) -> Vec<BatchJobRecord> {
        self.read(|s| s.list_batchjobs(user, f))
    }

    // ---- transfers ----

    pub fn list_transfers(&self, user: UserId, f: &TransferFilter) -> ApiResult<Vec<TransferItemRecord>> {
        self.read(|s| s.list_transfers(user, f))
    }

    pub fn update_transfers(&self, user: UserId, updates: Vec<TransferUpdate>) -> ApiResult<TransferUpdateResult> {
        expect_reply!(self.run(Command::UpdateTransfers { user, updates }), Transfers)
    }

    // ---- read models ----

    pub fn backlog(&self, user: UserId, site: SiteId) -> ApiResult<BacklogSummary> {
        self.read(|s| s.backlog(user, site))
    }

    pub fn query_events(&self, user: UserId, f: &EventFilter) -> Vec<EventRecord> {
        self.read(|s| s.query_events(user, f))
    }
}
