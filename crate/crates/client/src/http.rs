//! Blocking HTTP transport.

use std::time::Duration;

use conduit_core::{
    AppId, AppSpec, BatchJobRecord, EventRecord, JobDraft, JobRecord, SessionId, SessionRecord, SiteId, SiteRecord,
    Timestamp, TransferItemRecord,
};
use conduit_service::query::{self, Pairs};
use conduit_service::{
    AccessToken, AcquireRequest, Api, ApiError, ApiResult, AppSyncResult, BacklogSummary, BatchJobFilter,
    CreateBatchJob, CreateSession, ErrorKind, EventFilter, ExpiryReport, JobFilter, JobQuery, JobUpdate, LoginRequest,
    PatchBatchJob, RegisterSite, TransferFilter, TransferUpdate, TransferUpdateResult, UpdateOutcome,
};
use reqwest::blocking::{Client, RequestBuilder};
use reqwest::Method;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone)]
pub struct HttpApi {
    base: String,
    token: String,
    client: Client,
}

fn unavailable(e: reqwest::Error) -> ApiError {
    ApiError::new(ErrorKind::Unavailable, format!("service unreachable: {e}"))
}

fn client() -> ApiResult<Client> {
    Client::builder()
        .timeout(Duration::from_secs(30))
        .build()
        .map_err(|e| ApiError::new(ErrorKind::Internal, e.to_string()))
}

fn finish<T: DeserializeOwned>(req: RequestBuilder) -> ApiResult<T> {
    let resp = req.send().map_err(unavailable)?;
    let status = resp.status();
    let body = resp.bytes().map_err(unavailable)?;
    if status.is_success() {
        serde_json::from_slice(&body)
            .map_err(|e| ApiError::new(ErrorKind::Internal, format!("malformed response: {e}")))
    } else {
        Err(serde_json::from_slice::<ApiError>(&body).unwrap_or_else(|_| {
            ApiError::new(ErrorKind::Internal, format!("HTTP {status}: {}", String::from_utf8_lossy(&body)))
        }))
    }
}

#[derive(Deserialize)]
struct Count {
    count: usize,
}

#[derive(Deserialize)]
struct Heartbeat {
    heartbeat: Timestamp,
}

impl HttpApi {
    pub fn new(base_url: &str, token: &str) -> ApiResult<Self> {
        Ok(HttpApi { base: base_url.trim_end_matches('/').to_string(), token: token.to_string(), client: client()? })
    }

    /// Exchanges a password for a token.
    pub fn login(base_url: &str, username: &str, password: &str) -> ApiResult<(Self, AccessToken)> {
        let base = base_url.trim_end_matches('/');
        let req = LoginRequest { username: username.into(), password: password.into() };
        let tok: AccessToken = finish(client()?.post(format!("{base}/auth/login")).json(&req))?;
        Ok((HttpApi::new(base, &tok.access_token)?, tok))
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn req(&self, method: Method, path: &str, pairs: &Pairs) -> RequestBuilder {
        let mut url = format!("{}{}", self.base, path);
        if !pairs.is_empty() {
            url.push('?');
            url.push_str(&query::encode(pairs));
        }
        self.client.request(method, url).bearer_auth(&self.token)
    }

    fn get<T: DeserializeOwned>(&self, path: &str, pairs: &Pairs) -> ApiResult<T> {
        finish(self.req(Method::GET, path, pairs))
    }

    fn send<B: Serialize + ?Sized, T: DeserializeOwned>(&self, method: Method, path: &str, body: &B) -> ApiResult<T> {
        finish(self.req(method, path, &Pairs::new()).json(body))
    }
}

impl Api for HttpApi {
    fn list_sites(&self) -> ApiResult<Vec<SiteRecord>> {
        self.get("/sites", &Pairs::new())
    }

    fn register_site(&self, req: &RegisterSite) -> ApiResult<SiteRecord> {
        self.send(Method::POST, "/sites", req)
    }

    fn sync_apps(&self, site: SiteId, apps: &[AppSpec]) -> ApiResult<Vec<AppId>> {
        let r: AppSyncResult = self.send(Method::POST, &format!("/sites/{site}/apps"), apps)?;
        Ok(r.app_ids)
    }

    fn list_apps(&self, site: Option<SiteId>) -> ApiResult<Vec<AppSpec>> {
        let pairs = site.map(|s| vec![("site_id".to_string(), s.to_string())]).unwrap_or_default();
        self.get("/apps", &pairs)
    }

    fn create_jobs(&self, drafts: &[JobDraft]) -> ApiResult<Vec<JobRecord>> {
        self.send(Method::POST, "/jobs", drafts)
    }

    fn query_jobs(&self, q: &JobQuery) -> ApiResult<Vec<JobRecord>> {
        self.get("/jobs", &query::job_query_pairs(q))
    }

    fn count_jobs(&self, f: &JobFilter) -> ApiResult<usize> {
        let c: Count = self.get("/jobs/count", &query::job_filter_pairs(f))?;
        Ok(c.count)
    }

    fn update_jobs(&self, updates: &[JobUpdate]) -> ApiResult<UpdateOutcome> {
        self.send(Method::PATCH, "/jobs", updates)
    }

    fn create_session(&self, req: &CreateSession) -> ApiResult<SessionRecord> {
        self.send(Method::POST, "/sessions", req)
    }

    fn acquire(&self, session: SessionId, req: &AcquireRequest) -> ApiResult<Vec<JobRecord>> {
        self.send(Method::POST, &format!("/sessions/{session}/acquire"), req)
    }

    fn heartbeat(&self, session: SessionId) -> ApiResult<Timestamp> {
        let h: Heartbeat = finish(self.req(Method::PUT, &format!("/sessions/{session}/heartbeat"), &Pairs::new()))?;
        Ok(h.heartbeat)
    }

    fn delete_session(&self, session: SessionId) -> ApiResult<ExpiryReport> {
        finish(self.req(Method::DELETE, &format!("/sessions/{session}"), &Pairs::new()))
    }

    fn create_batchjob(&self, req: &CreateBatchJob) -> ApiResult<BatchJobRecord> {
        self.send(Method::POST, "/batch-jobs", req)
    }

    fn list_batchjobs(&self, f: &BatchJobFilter) -> ApiResult<Vec<BatchJobRecord>> {
        self.get("/batch-jobs", &query::batchjob_filter_pairs(f))
    }

    fn patch_batchjob(&self, req: &PatchBatchJob) -> ApiResult<BatchJobRecord> {
        self.send(Method::PATCH, "/batch-jobs", req)
    }

    fn list_transfers(&self, f: &TransferFilter) -> ApiResult<Vec<TransferItemRecord>> {
        self.get("/transfers", &query::transfer_filter_pairs(f))
    }

    fn update_transfers(&self, updates: &[TransferUpdate]) -> ApiResult<TransferUpdateResult> {
        self.send(Method::PATCH, "/transfers", updates)
    }

    fn backlog(&self, site: SiteId) -> ApiResult<BacklogSummary> {
        self.get(&format!("/sites/{site}/backlog"), &Pairs::new())
    }

    fn events(&self, f: &EventFilter) -> ApiResult<Vec<EventRecord>> {
        self.get("/events", &query::event_filter_pairs(f))
    }
}
