//! Central API service: the multi-tenant store of sites, apps, jobs, events,
//! transfer items, batch jobs and sessions, with lease-based job acquisition
//! and a durable command log. [`api::Api`] is the operation set; it is served
//! in-process by [`api::LocalApi`] and over HTTP by [`http::router`].

pub mod api;
pub mod auth;
pub mod command;
pub mod error;
pub mod http;
pub mod query;
pub mod service;
pub mod store;
pub mod types;
pub mod wal;

pub use api::{Api, LocalApi};
pub use error::{ApiError, ApiResult, ErrorKind};
pub use service::{Service, ServiceConfig};
pub use store::{Snapshot, State, StoreConfig};
pub use types::*;
