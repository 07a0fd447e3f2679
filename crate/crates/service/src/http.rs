//! HTTP surface over [`Service`].

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path, RawQuery, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post, put};
use axum::{Json, Router};
use conduit_core::{AppSpec, JobDraft, SessionId, SiteId, UserId};
use serde_json::json;

use crate::error::{ApiError, ApiResult, ErrorKind};
use crate::query;
use crate::service::Service;
use crate::types::*;

type Svc = Arc<Service>;

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

fn user(svc: &Service, headers: &HeaderMap) -> ApiResult<UserId> {
    let token = headers
        .get(axum::http::header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer ").or_else(|| v.strip_prefix("bearer ")))
        .ok_or_else(|| ApiError::new(ErrorKind::AuthFailed, "missing bearer token"))?;
    svc.authenticate(token.trim())
}

type Reply = Result<Response, ApiError>;

fn ok<T: serde::Serialize>(v: T) -> Reply {
    Ok(Json(v).into_response())
}

fn created<T: serde::Serialize>(v: T) -> Reply {
    Ok((StatusCode::CREATED, Json(v)).into_response())
}

async fn login(State(svc): State<Svc>, Json(req): Json<LoginRequest>) -> Reply {
    ok(svc.login(&req)?)
}

async fn list_sites(State(svc): State<Svc>, h: HeaderMap) -> Reply {
    let u = user(&svc, &h)?;
    ok(svc.list_sites(u))
}

async fn create_site(State(svc): State<Svc>, h: HeaderMap, Json(req): Json<RegisterSite>) -> Reply {
    let u = user(&svc, &h)?;
    created(svc.register_site(u, req)?)
}

async fn site_backlog(State(svc): State<Svc>, h: HeaderMap, Path(site): Path<SiteId>) -> Reply {
    let u = user(&svc, &h)?;
    ok(svc.backlog(u, site)?)
}

async fn sync_apps(State(svc): State<Svc>, h: HeaderMap, Path(site): Path<SiteId>, Json(apps): Json<Vec<AppSpec>>) -> Reply {
    let u = user(&svc, &h)?;
    ok(AppSyncResult { app_ids: svc.sync_apps(u, site, apps)? })
}

async fn list_apps(State(svc): State<Svc>, h: HeaderMap, RawQuery(q): RawQuery) -> Reply {
    let u = user(&svc, &h)?;
    let pairs = query::parse(q.as_deref());
    let site = pairs
        .iter()
        .find(|(k, _)| k == "site_id")
        .map(|(_, v)| v.parse::<SiteId>().map_err(|_| ApiError::new(ErrorKind::InvalidFilter, "bad site_id")))
        .transpose()?;
    ok(svc.list_apps(u, site))
}

async fn list_jobs(State(svc): State<Svc>, h: HeaderMap, RawQuery(q): RawQuery) -> Reply {
    let u = user(&svc, &h)?;
    let q = query::job_query_from(&query::parse(q.as_deref()))?;
    ok(svc.query_jobs(u, &q))
}

async fn count_jobs(State(svc): State<Svc>, h: HeaderMap, RawQuery(q): RawQuery) -> Reply {
    let u = user(&svc, &h)?;
    let q = query::job_query_from(&query::parse(q.as_deref()))?;
    ok(json!({ "count": svc.count_jobs(u, &q.filter) }))
}

async fn create_jobs(State(svc): State<Svc>, h: HeaderMap, Json(drafts): Json<Vec<JobDraft>>) -> Reply {
    let u = user(&svc, &h)?;
    created(svc.create_jobs(u, drafts)?)
}

async fn update_jobs(State(svc): State<Svc>, h: HeaderMap, Json(updates): Json<Vec<JobUpdate>>) -> Reply {
    let u = user(&svc, &h)?;
    ok(svc.update_jobs(u, updates)?)
}

async fn list_batchjobs(State(svc): State<Svc>, h: HeaderMap, RawQuery(q): RawQuery) -> Reply {
    let u = user(&svc, &h)?;
    let f = query::batchjob_filter_from(&query::parse(q.as_deref()))?;
    ok(svc.list_batchjobs(u, &f))
}

async fn create_batchjob(State(svc): State<Svc>, h: HeaderMap, Json(req): Json<CreateBatchJob>) -> Reply {
    let u = user(&svc, &h)?;
    created(svc.create_batchjob(u, req)?)
}

async fn patch_batchjob(State(svc): State<Svc>, h: HeaderMap, Json(req): Json<PatchBatchJob>) -> Reply {
    let u = user(&svc, &h)?;
    ok(svc.patch_batchjob(u, req)?)
}

async fn list_sessions(State(svc): State<Svc>, h: HeaderMap) -> Reply {
    let u = user(&svc, &h)?;
    ok(svc.list_sessions(u, None))
}

async fn create_session(State(svc): State<Svc>, h: HeaderMap, Json(req): Json<CreateSession>) -> Reply {
    let u = user(&svc, &h)?;
    created(svc.create_session(u, req)?)
}

async fn acquire(State(svc): State<Svc>, h: HeaderMap, Path(sid): Path<SessionId>, Json(req): Json<AcquireRequest>) -> Reply {
    let u = user(&svc, &h)?;
    ok(svc.acquire(u, sid, req)?)
}

async fn heartbeat(State(svc): State<Svc>, h: HeaderMap, Path(sid): Path<SessionId>) -> Reply {
    let u = user(&svc, &h)?;
    ok(json!({ "heartbeat": svc.heartbeat(u, sid)? }))
}

async fn end_session(State(svc): State<Svc>, h: HeaderMap, Path(sid): Path<SessionId>) -> Reply {
    let u = user(&svc, &h)?;
    ok(svc.delete_session(u, sid)?)
}

async fn list_transfers(State(svc): State<Svc>, h: HeaderMap, RawQuery(q): RawQuery) -> Reply {
    let u = user(&svc, &h)?;
    let f = query::transfer_filter_from(&query::parse(q.as_deref()))?;
    ok(svc.list_transfers(u, &f)?)
}

async fn update_transfers(State(svc): State<Svc>, h: HeaderMap, Json(updates): Json<Vec<TransferUpdate>>) -> Reply {
    let u = user(&svc, &h)?;
    ok(svc.update_transfers(u, updates)?)
}

async fn list_events(State(svc): State<Svc>, h: HeaderMap, RawQuery(q): RawQuery) -> Reply {
    let u = user(&svc, &h)?;
    let f = query::event_filter_from(&query::parse(q.as_deref()))?;
    ok(svc.query_events(u, &f))
}

async fn fallback() -> ApiError {
    ApiError::new(ErrorKind::NotFound, "no such route")
}

pub fn router(svc: Svc) -> Router {
    Router::new()
        .route("/auth/login", post(login))
        .route("/sites", get(list_sites).post(create_site))
        .route("/sites/{id}/backlog", get(site_backlog))
        .route("/sites/{id}/apps", post(sync_apps))
        .route("/apps", get(list_apps))
        .route("/jobs", get(list_jobs).post(create_jobs).patch(update_jobs))
        .route("/jobs/count", get(count_jobs))
        .route("/batch-jobs", get(list_batchjobs).post(create_batchjob).patch(patch_batchjob))
        .route("/sessions", get(list_sessions).post(create_session))
        .route("/sessions/{id}/acquire", post(acquire))
        .route("/sessions/{id}/heartbeat", put(heartbeat))
        .route("/sessions/{id}", delete(end_session))
        .route("/transfers", get(list_transfers).patch(update_transfers))
        .route("/events", get(list_events))
        .fallback(fallback)
        .with_state(svc)
}

/// Serves until `shutdown` resolves, sweeping stale sessions in the background.
pub async fn serve(
    listener: tokio::net::TcpListener,
    svc: Svc,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let ttl = svc.read(|s| s.config().lease_ttl_secs);
    let sweeper = {
        let svc = svc.clone();
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(Duration::from_secs_f64((ttl / 3.0).max(0.1)));
            loop {
                tick.tick().await;
                let report = svc.expire_stale_sessions();
                if !report.reset.is_empty() || !report.released.is_empty() {
                    log::info!("expired sessions: {} jobs reset, {} released", report.reset.len(), report.released.len());
                }
            }
        })
    };
    let result = axum::serve(listener, router(svc)).with_graceful_shutdown(shutdown).await;
    sweeper.abort();
    result
}

/// A server running on its own runtime thread.
pub struct ServerHandle {
    pub addr: SocketAddr,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<std::io::Result<()>>>,
}

impl ServerHandle {
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn stop(mut self) -> std::io::Result<()> {
        self.shutdown()
    }

    fn shutdown(&mut self) -> std::io::Result<()> {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        match self.thread.take() {
            Some(t) => t.join().unwrap_or_else(|_| Err(std::io::Error::other("server thread panicked"))),
            None => Ok(()),
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        let _ = self.shutdown();
    }
}

pub fn spawn_server(svc: Svc, addr: SocketAddr) -> std::io::Result<ServerHandle> {
    let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
    let listener = rt.block_on(tokio::net::TcpListener::bind(addr))?;
    let addr = listener.local_addr()?;
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let thread = std::thread::spawn(move || {
        rt.block_on(serve(listener, svc, async move {
            let _ = rx.await;
        }))
    });
    Ok(ServerHandle { addr, stop: Some(tx), thread: Some(thread) })
}
