#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;

use conduit_core::*;
use conduit_service::*;

/// Delegates to an inner transport, counting calls; can be switched offline.
pub struct Counting {
    pub inner: LocalApi,
    pub calls: AtomicUsize,
    pub offline: AtomicBool,
}

impl Counting {
    pub fn new(inner: LocalApi) -> Arc<Self> {
        Arc::new(Counting { inner, calls: AtomicUsize::new(0), offline: AtomicBool::new(false) })
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn hit(&self) -> ApiResult<()> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if self.offline.load(Ordering::SeqCst) {
            return Err(ApiError::new(ErrorKind::Unavailable, "offline"));
        }
        Ok(())
    }
}

macro_rules! delegate {
    ($($name:ident($($arg:ident: $ty:ty),*) -> $ret:ty;)*) => {
        impl Api for Counting {
            $(fn $name(&self, $($arg: $ty),*) -> ApiResult<$ret> {
                self.hit()?;
                self.inner.$name($($arg),*)
            })*
        }
    };
}

delegate! {
    list_sites() -> Vec<SiteRecord>;
    register_site(req: &RegisterSite) -> SiteRecord;
    sync_apps(site: SiteId, apps: &[AppSpec]) -> Vec<AppId>;
    list_apps(site: Option<SiteId>) -> Vec<AppSpec>;
    create_jobs(drafts: &[JobDraft]) -> Vec<JobRecord>;
    query_jobs(q: &JobQuery) -> Vec<JobRecord>;
    count_jobs(f: &JobFilter) -> usize;
    update_jobs(updates: &[JobUpdate]) -> UpdateOutcome;
    create_session(req: &CreateSession) -> SessionRecord;
    acquire(session: SessionId, req: &AcquireRequest) -> Vec<JobRecord>;
    heartbeat(session: SessionId) -> Timestamp;
    delete_session(session: SessionId) -> ExpiryReport;
    create_batchjob(req: &CreateBatchJob) -> BatchJobRecord;
    list_batchjobs(f: &BatchJobFilter) -> Vec<BatchJobRecord>;
    patch_batchjob(req: &PatchBatchJob) -> BatchJobRecord;
    list_transfers(f: &TransferFilter) -> Vec<TransferItemRecord>;
    update_transfers(updates: &[TransferUpdate]) -> TransferUpdateResult;
    backlog(site: SiteId) -> BacklogSummary;
    events(f: &EventFilter) -> Vec<EventRecord>;
}

pub struct World {
    pub clock: Arc<ManualClock>,
    pub svc: Arc<Service>,
    pub local: LocalApi,
    pub sites: Vec<SiteId>,
    pub apps: Vec<AppId>,
}

pub fn echo_app() -> AppSpec {
    AppSpec {
        name: "echo".into(),
        command_template: "echo {{msg}}".into(),
        parameters: [("msg".to_string(), ParameterSpec { required: false, default: Some("x".into()) })].into(),
        ..Default::default()
    }
}

pub fn world(n_sites: usize) -> World {
    let clock = Arc::new(ManualClock::new(Timestamp(1_000_000_000)));
    let svc = Arc::new(Service::in_memory(StoreConfig::default(), clock.clone()));
    let user = svc.register_user("alice", "pw").unwrap();
    let local = LocalApi::new(svc.clone(), user.user_id);
    let mut sites = Vec::new();
    let mut apps = Vec::new();
    for i in 0..n_sites {
        let s = local.register_site(&RegisterSite { hostname: format!("h{i}"), path: "/p".into() }).unwrap().site_id;
        apps.push(local.sync_apps(s, &[echo_app()]).unwrap()[0]);
        sites.push(s);
    }
    World { clock, svc, local, sites, apps }
}

pub fn draft(app: AppId, tags: &[(&str, &str)]) -> JobDraft {
    JobDraft {
        app_id: app,
        workdir: "w".into(),
        tags: tags.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect::<BTreeMap<_, _>>(),
        ..Default::default()
    }
}
