//! Deterministic simulation of federated facilities.
//!
//! The simulator drives the real site agent, launcher and service code
//! against simulated batch queues, a fluid transfer fabric and sampled
//! application runtimes. Every random draw comes from a named substream of
//! the scenario seed, so a scenario and a seed fix the event log exactly.

pub mod fabric;
pub mod library;
pub mod platform;
pub mod profile;
pub mod report;
pub mod rng;
pub mod scenario;
pub mod stress;
pub mod sweep;
pub mod world;

pub use library::{builtin, builtin_names};
pub use profile::{QueueModel, RouteModel, RuntimeModel};
pub use report::{SimMetrics, SiteMetrics};
pub use scenario::{ConfigError, Phase, Scenario, Strategy};
pub use stress::{run_lease_stress, StressConfig, StressReport};
pub use sweep::{run_many, seed_sweep};
pub use world::{run_scenario, RunOutcome};
