//! Scenario files: the facilities, routes, client script and failure
//! injections of one simulated experiment.

use std::collections::BTreeMap;
use std::path::Path;

use conduit_core::{JobMode, ResourceSpec};
use conduit_site::ElasticQueueConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::profile::{QueueModel, RouteModel, RuntimeModel};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed scenario: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Hard stop in simulated seconds.
    pub duration: f64,
    /// Stop early once the client script is exhausted and every job is
    /// terminal.
    #[serde(default = "yes")]
    pub stop_when_drained: bool,
    #[serde(default)]
    pub service: ServiceSettings,
    #[serde(default)]
    pub sites: Vec<SiteSpec>,
    #[serde(default)]
    pub routes: Vec<RouteModel>,
    #[serde(default)]
    pub client: ClientSpec,
    #[serde(default)]
    pub failures: FailureSpec,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceSettings {
    pub lease_ttl: f64,
    pub max_retries: u32,
    /// Seconds between passes of the session reaper.
    pub reap_interval: f64,
}

impl Default for ServiceSettings {
    fn default() -> Self {
        ServiceSettings { lease_ttl: 60.0, max_retries: 3, reap_interval: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NodeSpec {
    pub cores: u32,
    pub gpus: f64,
    pub max_tasks: u32,
}

impl Default for NodeSpec {
    fn default() -> Self {
        NodeSpec { cores: 64, gpus: 0.0, max_tasks: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferSpec {
    pub batch_size: usize,
    pub max_concurrent: usize,
    pub max_attempts: u32,
}

impl Default for TransferSpec {
    fn default() -> Self {
        TransferSpec { batch_size: 16, max_concurrent: 3, max_attempts: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LauncherSpec {
    pub job_mode: JobMode,
    pub poll_interval: f64,
    pub idle_timeout: f64,
    pub heartbeat_interval: f64,
    pub grace: f64,
    pub spawn_cost: f64,
    pub prefetch_factor: u32,
}

impl Default for LauncherSpec {
    fn default() -> Self {
        LauncherSpec {
            job_mode: JobMode::PerTaskSpawn,
            poll_interval: 1.0,
            idle_timeout: 120.0,
            heartbeat_interval: 10.0,
            grace: 30.0,
            spawn_cost: 0.0,
            prefetch_factor: 1,
        }
    }
}

/// An allocation requested by the user at a fixed time, independent of the
/// elastic queue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StaticAllocation {
    pub nodes: u32,
    /// Minutes.
    pub wall_time: u32,
    #[serde(default)]
    pub at: f64,
    #[serde(default = "default_queue")]
    pub queue: String,
}

fn default_queue() -> String {
    "default".into()
}

/// File sizes of one transfer slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlotSpec {
    pub name: String,
    /// Megabytes moved per job.
    pub mb: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppModel {
    pub name: String,
    pub runtime: RuntimeModel,
    #[serde(default)]
    pub resources: ResourceSpec,
    #[serde(default)]
    pub inputs: Vec<SlotSpec>,
    #[serde(default)]
    pub outputs: Vec<SlotSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteSpec {
    pub name: String,
    #[serde(default)]
    pub node: NodeSpec,
    #[serde(default = "default_queues")]
    pub queues: BTreeMap<String, QueueModel>,
    /// Seconds between agent passes.
    #[serde(default = "default_sync")]
    pub sync_interval: f64,
    /// Relative jitter of the agent period, so passes are not phase locked.
    #[serde(default = "default_jitter")]
    pub sync_jitter: f64,
    #[serde(default)]
    pub transfer: TransferSpec,
    #[serde(default)]
    pub launcher: LauncherSpec,
    #[serde(default)]
    pub allocations: Vec<StaticAllocation>,
    #[serde(default)]
    pub elastic: Option<ElasticQueueConfig>,
    #[serde(default)]
    pub apps: Vec<AppModel>,
}

fn default_queues() -> BTreeMap<String, QueueModel> {
    BTreeMap::from([("default".to_string(), QueueModel::cobalt())])
}

fn default_sync() -> f64 {
    5.0
}

fn default_jitter() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Every submission goes to the first listed site.
    #[default]
    Single,
    RoundRobin,
    ShortestBacklog,
}

/// One stretch of the submission script. Times are simulated seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Phase {
    /// Evenly spaced single submissions at `rate` jobs per second.
    Constant { rate: f64, start: f64, end: f64 },
    /// Poisson arrivals at `rate` jobs per second, stopping at `end` or
    /// after `count` jobs.
    Poisson {
        rate: f64,
        #[serde(default)]
        start: f64,
        #[serde(default)]
        end: Option<f64>,
        #[serde(default)]
        count: Option<usize>,
    },
    /// `size` jobs every `every` seconds, routed as one batch.
    Batches { size: usize, every: f64, start: f64, end: f64 },
    /// `count` jobs at once.
    Burst { count: usize, at: f64 },
    /// Tops every site up to `target` pending jobs each `poll` seconds.
    Backlog { target: usize, poll: f64, start: f64, end: f64 },
}

impl Phase {
    pub fn start(&self) -> f64 {
        match *self {
            Phase::Constant { start, .. }
            | Phase::Poisson { start, .. }
            | Phase::Batches { start, .. }
            | Phase::Backlog { start, .. } => start,
            Phase::Burst { at, .. } => at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClientSpec {
    /// Endpoint holding the input datasets and receiving results.
    pub source: String,
    pub app: String,
    /// Target sites; empty means every site.
    pub sites: Vec<String>,
    pub strategy: Strategy,
    /// Maximum age in seconds of a cached backlog before it is refetched.
    pub backlog_staleness: f64,
    pub phases: Vec<Phase>,
}

impl Default for ClientSpec {
    fn default() -> Self {
        ClientSpec {
            source: "aps".into(),
            app: String::new(),
            sites: Vec::new(),
            strategy: Strategy::Single,
            backlog_staleness: 8.0,
            phases: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StallSpec {
    pub start: f64,
    pub end: f64,
    /// `[src, dst]`; absent stalls every route.
    #[serde(default)]
    pub route: Option<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FailureSpec {
    /// Seconds between hard kills of a random running launcher.
    pub kill_launcher_every: Option<f64>,
    pub kill_start: f64,
    /// Kills stop after this time; absent means never.
    pub kill_end: Option<f64>,
    /// Restrict kills to one site.
    pub kill_site: Option<String>,
    pub transfer_stalls: Vec<StallSpec>,
}

impl Scenario {
    pub fn from_yaml(text: &str) -> Result<Self, ConfigError> {
        let s: Scenario = serde_yaml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    /// Reads YAML or JSON, chosen by extension (JSON for `.json`).
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&text)
        } else {
            Self::from_yaml(&text)
        }
    }

    pub fn site(&self, name: &str) -> Option<&SiteSpec> {
        self.sites.iter().find(|s| s.name == name)
    }

    /// Sites the client submits to, in routing order.
    pub fn target_sites(&self) -> Vec<String> {
        if self.client.sites.is_empty() {
            self.sites.iter().map(|s| s.name.clone()).collect()
        } else {
            self.client.sites.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(self.duration >= 0.0) || !self.duration.is_finite() {
            return bad("duration must be a finite number of seconds".into());
        }
        if !(self.service.lease_ttl > 0.0) || !(self.service.reap_interval > 0.0) {
            return bad("lease_ttl and reap_interval must be positive".into());
        }
        let mut names = std::collections::BTreeSet::new();
        for s in &self.sites {
            if !names.insert(s.name.as_str()) {
                return bad(format!("site `{}` given twice", s.name));
            }
            if s.name == self.client.source {
                return bad(format!("site `{}` has the client's source name", s.name));
            }
            if !(s.sync_interval > 0.0) || !(0.0..1.0).contains(&s.sync_jitter) {
                return bad(format!("site `{}`: sync_interval must be positive and sync_jitter in [0, 1)", s.name));
            }
            if !(s.launcher.poll_interval > 0.0) || s.launcher.spawn_cost < 0.0 {
                return bad(format!("site `{}`: bad launcher settings", s.name));
            }
            for q in s.queues.values() {
                q.validate().map_err(|e| ConfigError::Invalid(format!("site `{}`: {e}", s.name)))?;
            }
            for a in &s.allocations {
                if !s.queues.contains_key(&a.queue) {
                    return bad(format!("site `{}`: allocation names unknown queue `{}`", s.name, a.queue));
                }
            }
            for app in &s.apps {
                app.runtime.validate().map_err(|e| ConfigError::Invalid(format!("app `{}`: {e}", app.name)))?;
                app.resources.validate().map_err(|e| ConfigError::Invalid(format!("app `{}`: {e}", app.name)))?;
            }
        }
        for r in &self.routes {
            r.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        let has_jobs = self.client.phases.iter().any(|p| !matches!(p, Phase::Burst { count: 0, .. }));
        if has_jobs {
            let targets = self.target_sites();
            if targets.is_empty() {
                return bad("the client has phases but there are no sites".into());
            }
            for t in &targets {
                let Some(site) = self.site(t) else {
                    return bad(format!("client targets unknown site `{t}`"));
                };
                if !site.apps.iter().any(|a| a.name == self.client.app) {
                    return bad(format!("site `{t}` has no app `{}`", self.client.app));
                }
            }
        }
        for p in &self.client.phases {
            let ok = match *p {
                Phase::Constant { rate, start, end } => rate > 0.0 && end >= start,
                Phase::Poisson { rate, start, end, .. } => rate > 0.0 && end.is_none_or(|e| e >= start),
                Phase::Batches { size, every, start, end } => size > 0 && every > 0.0 && end >= start,
                Phase::Burst { at, .. } => at >= 0.0,
                Phase::Backlog { target, poll, start, end } => target > 0 && poll > 0.0 && end >= start,
            };
            if !ok {
                return bad(format!("bad client phase {p:?}"));
            }
        }
        if let Some(every) = self.failures.kill_launcher_every {
            if !(every > 0.0) {
                return bad("kill_launcher_every must be positive".into());
            }
        }
        if let Some(site) = &self.failures.kill_site {
            if self.site(site).is_none() {
                return bad(format!("kill_site names unknown site `{site}`"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed: 3
duration: 600
sites:
  - name: theta
    apps:
      - name: md
        runtime: { mean: 18.6, sd: 9.6 }
client:
  app: md
  phases:
    - { kind: constant, rate: 1.0, start: 0, end: 60 }
"#;

    #[test]
    fn minimal_yaml_parses_with_defaults() {
        let s = Scenario::from_yaml(MINIMAL).unwrap();
        assert_eq!(s.sites[0].queues["default"], QueueModel::cobalt());
        assert_eq!(s.sites[0].transfer.batch_size, 16);
        assert_eq!(s.target_sites(), vec!["theta".to_string()]);
        assert!(s.stop_when_drained);
        let round = Scenario::from_json(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(round, s);
    }

    #[test]
    fn invalid_scenarios_are_rejected() {
        let unknown_field = MINIMAL.replace("seed: 3", "seed: 3\nbogus: 1");
        assert!(matches!(Scenario::from_yaml(&unknown_field), Err(ConfigError::Parse(_))));
        let missing_app = MINIMAL.replace("app: md", "app: xpcs");
        assert!(matches!(Scenario::from_yaml(&missing_app), Err(ConfigError::Invalid(_))));
        let bad_rate = MINIMAL.replace("rate: 1.0", "rate: 0.0");
        assert!(matches!(Scenario::from_yaml(&bad_rate), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn empty_scenario_is_valid() {
        let s = Scenario::from_yaml("duration: 10").unwrap();
        assert!(s.sites.is_empty() && s.client.phases.is_empty());
    }
}
