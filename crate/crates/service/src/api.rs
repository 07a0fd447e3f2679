//! The client-facing operation set, independent of transport.

use std::sync::Arc;

use conduit_core::{
    AppId, AppSpec, BatchJobRecord, EventRecord, JobDraft, JobRecord, SessionId, SessionRecord, SiteId, SiteRecord,
    Timestamp, TransferItemRecord, UserId,
};

use crate::error::ApiResult;
use crate::service::Service;
use crate::types::*;

/// Everything a site agent, launcher or client script can ask of the
/// service, on behalf of one authenticated user.
pub trait Api: Send + Sync {
    fn list_sites(&self) -> ApiResult<Vec<SiteRecord>>;
    fn register_site(&self, req: &RegisterSite) -> ApiResult<SiteRecord>;
    fn sync_apps(&self, site: SiteId, apps: &[AppSpec]) -> ApiResult<Vec<AppId>>;
    fn list_apps(&self, site: Option<SiteId>) -> ApiResult<Vec<AppSpec>>;

    fn create_jobs(&self, drafts: &[JobDraft]) -> ApiResult<Vec<JobRecord>>;
    fn query_jobs(&self, q: &JobQuery) -> ApiResult<Vec<JobRecord>>;
    fn count_jobs(&self, f: &JobFilter) -> ApiResult<usize>;
    fn update_jobs(&self, updates: &[JobUpdate]) -> ApiResult<UpdateOutcome>;

    fn create_session(&self, req: &CreateSession) -> ApiResult<SessionRecord>;
    fn acquire(&self, session: SessionId, req: &AcquireRequest) -> ApiResult<Vec<JobRecord>>;
    fn heartbeat(&self, session: SessionId) -> ApiResult<Timestamp>;
    fn delete_session(&self, session: SessionId) -> ApiResult<ExpiryReport>;

    fn create_batchjob(&self, req: &CreateBatchJob) -> ApiResult<BatchJobRecord>;
    fn list_batchjobs(&self, f: &BatchJobFilter) -> ApiResult<Vec<BatchJobRecord>>;
    fn patch_batchjob(&self, req: &PatchBatchJob) -> ApiResult<BatchJobRecord>;

    fn list_transfers(&self, f: &TransferFilter) -> ApiResult<Vec<TransferItemRecord>>;
    fn update_transfers(&self, updates: &[TransferUpdate]) -> ApiResult<TransferUpdateResult>;

    fn backlog(&self, site: SiteId) -> ApiResult<BacklogSummary>;
    fn events(&self, f: &EventFilter) -> ApiResult<Vec<EventRecord>>;
}

/// In-process transport: direct calls into a shared [`Service`].
#[derive(Clone)]
pub struct LocalApi {
    svc: Arc<Service>,
    user: UserId,
}

impl LocalApi {
    pub fn new(svc: Arc<Service>, user: UserId) -> Self {
        LocalApi { svc, user }
    }

    pub fn with_token(svc: Arc<Service>, token: &str) -> ApiResult<Self> {
        let user = svc.authenticate(token)?;
        Ok(LocalApi { svc, user })
    }

    pub fn user(&self) -> UserId {
        self.user
    }

    pub fn service(&self) -> &Arc<Service> {
        &self.svc
    }
}

impl Api for LocalApi {
    fn list_sites(&self) -> ApiResult<Vec<SiteRecord>> {
        Ok(self.svc.list_sites(self.user))
    }
    fn register_site(&self, req: &RegisterSite) -> ApiResult<SiteRecord> {
        self.svc.register_site(self.user, req.clone())
    }
    fn sync_apps(&self, site: SiteId, apps: &[AppSpec]) -> ApiResult<Vec<AppId>> {
        self.svc.sync_apps(self.user, site, apps.to_vec())
    }
    fn list_apps(&self, site: Option<SiteId>) -> ApiResult<Vec<AppSpec>> {
        Ok(self.svc.list_apps(self.user, site))
    }
    fn create_jobs(&self, drafts: &[JobDraft]) -> ApiResult<Vec<JobRecord>> {
        self.svc.create_jobs(self.user, drafts.to_vec())
    }
    fn query_jobs(&self, q: &JobQuery) -> ApiResult<Vec<JobRecord>> {
        Ok(self.svc.query_jobs(self.user, q))
    }
    fn count_jobs(&self, f: &JobFilter) -> ApiResult<usize> {
        Ok(self.svc.count_jobs(self.user, f))
    }
    fn update_jobs(&self, updates: &[JobUpdate]) -> ApiResult<UpdateOutcome> {
        self.svc.update_jobs(self.user, updates.to_vec())
    }
    fn create_session(&self, req: &CreateSession) -> ApiResult<SessionRecord> {
        self.svc.create_session(self.user, req.clone())
    }
    fn acquire(&self, session: SessionId, req: &AcquireRequest) -> ApiResult<Vec<JobRecord>> {
        self.svc.acquire(self.user, session, req.clone())
    }
    fn heartbeat(&self, session: SessionId) -> ApiResult<Timestamp> {
        self.svc.heartbeat(self.user, session)
    }
    fn delete_session(&self, session: SessionId) -> ApiResult<ExpiryReport> {
        self.svc.delete_session(self.user, session)
    }
    fn create_batchjob(&self, req: &CreateBatchJob) -> ApiResult<BatchJobRecord> {
        self.svc.create_batchjob(self.user, req.clone())
    }
    fn list_batchjobs(&self, f: &BatchJobFilter) -> ApiResult<Vec<BatchJobRecord>> {
        Ok(self.svc.list_batchjobs(self.user, f))
    }
    fn patch_batchjob(&self, req: &PatchBatchJob) -> ApiResult<BatchJobRecord> {
        self.svc.patch_batchjob(self.user, req.clone())
    }
    fn list_transfers(&self, f: &TransferFilter) -> ApiResult<Vec<TransferItemRecord>> {
        self.svc.list_transfers(self.user, f)
    }
    fn update_transfers(&self, updates: &[TransferUpdate]) -> ApiResult<TransferUpdateResult> {
        self.svc.update_transfers(self.user, updates.to_vec())
    }
    fn backlog(&self, site: SiteId) -> ApiResult<BacklogSummary> {
        self.svc.backlog(self.user, site)
    }
    fn events(&self, f: &EventFilter) -> ApiResult<Vec<EventRecord>> {
        Ok(self.svc.query_events(self.user, f))
    }
}
