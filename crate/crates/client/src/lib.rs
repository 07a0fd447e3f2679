//! Client SDK for the conduit service.
//!
//! [`HttpApi`] speaks the REST protocol and implements the same [`Api`]
//! trait as the in-process transport, so everything built on top of it
//! (queries, routing, the launcher and site agent) works over either.
//!
//! [`Api`]: conduit_service::Api

pub mod http;
pub mod query;
pub mod routing;

pub use http::HttpApi;
pub use query::{save_all, EditableJob, JobQuery};
pub use routing::{distribute_round_robin, distribute_shortest_backlog, RoutingState};
