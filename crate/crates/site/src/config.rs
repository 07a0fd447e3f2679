use std::collections::BTreeMap;
use std::path::Path;

use conduit_core::JobMode;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read settings: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed settings: {0}")]
    Parse(#[from] serde_yaml::Error),
    #[error("invalid settings: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QueuePolicy {
    pub max_nodes: u32,
    /// Minutes.
    pub max_walltime: u32,
    pub max_queued_jobs: u32,
}

impl Default for QueuePolicy {
    fn default() -> Self {
        QueuePolicy { max_nodes: 128, max_walltime: 60, max_queued_jobs: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransferConfig {
    pub local_endpoint: String,
    pub trusted_remote_endpoints: Vec<String>,
    pub max_concurrent_tasks: usize,
    pub transfer_batch_size: usize,
    /// Attempts per item before it is marked ERROR.
    pub max_attempts: u32,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            local_endpoint: "local".into(),
            trusted_remote_endpoints: Vec::new(),
            max_concurrent_tasks: 3,
            transfer_batch_size: 16,
            max_attempts: 3,
        }
    }
}

impl TransferConfig {
    pub fn is_trusted(&self, endpoint: &str) -> bool {
        endpoint == self.local_endpoint || self.trusted_remote_endpoints.iter().any(|e| e == endpoint)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ElasticQueueConfig {
    pub queue: String,
    pub project: String,
    pub job_mode: JobMode,
    pub min_nodes: u32,
    pub max_nodes: u32,
    /// Minutes.
    pub min_walltime: u32,
    /// Minutes.
    pub max_walltime: u32,
    pub max_queued_batchjobs: u32,
    /// Seconds a BatchJob may wait in the queue before it is withdrawn.
    pub max_queue_wait: f64,
    pub use_backfill: bool,
    /// Upper bound on the nodes of all live allocations together.
    pub max_total_nodes: Option<u32>,
    /// Count READY jobs (still staging in) toward the runnable footprint.
    pub count_staging_as_runnable: bool,
}

impl Default for ElasticQueueConfig {
    fn default() -> Self {
        ElasticQueueConfig {
            queue: "default".into(),
            project: String::new(),
            job_mode: JobMode::PerTaskSpawn,
            min_nodes: 1,
            max_nodes: 8,
            min_walltime: 10,
            max_walltime: 60,
            max_queued_batchjobs: 4,
            max_queue_wait: 3600.0,
            use_backfill: false,
            max_total_nodes: None,
            count_staging_as_runnable: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LauncherSettings {
    pub job_mode: JobMode,
    pub idle_timeout: f64,
    pub cores_per_node: u32,
    pub gpus_per_node: f64,
    /// Platform limit on co-resident tasks per node.
    pub max_tasks_per_node: u32,
    /// Command used by the local scheduler to start a launcher; `{batchjob_id}`,
    /// `{num_nodes}`, `{wall_time}` (minutes) and `{job_mode}` are substituted.
    pub command: String,
}

impl Default for LauncherSettings {
    fn default() -> Self {
        LauncherSettings {
            job_mode: JobMode::PerTaskSpawn,
            idle_timeout: 120.0,
            cores_per_node: 64,
            gpus_per_node: 0.0,
            max_tasks_per_node: 64,
            command: "conduit launcher --batchjob {batchjob_id} --nodes {num_nodes} --wall-time {wall_time} --job-mode {job_mode}"
                .into(),
        }
    }
}

/// The contents of a site's `settings.yml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SiteConfig {
    pub service_url: String,
    pub token_path: String,
    pub site_id: Option<conduit_core::SiteId>,
    pub scheduler_interface: String,
    /// Seconds between module passes.
    pub sync_interval: f64,
    pub queue_policies: BTreeMap<String, QueuePolicy>,
    pub allocations: Vec<String>,
    pub transfer: TransferConfig,
    pub elastic_queue: Option<ElasticQueueConfig>,
    pub launcher: LauncherSettings,
}

impl Default for SiteConfig {
    fn default() -> Self {
        SiteConfig {
            service_url: "http://127.0.0.1:8000".into(),
            token_path: "~/.conduit/token".into(),
            site_id: None,
            scheduler_interface: "local".into(),
            sync_interval: 10.0,
            queue_policies: BTreeMap::new(),
            allocations: Vec::new(),
            transfer: TransferConfig::default(),
            elastic_queue: None,
            launcher: LauncherSettings::default(),
        }
    }
}

impl SiteConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.into()));
        if self.sync_interval <= 0.0 {
            return bad("sync_interval must be positive");
        }
        if self.transfer.transfer_batch_size == 0 {
            return bad("transfer_batch_size must be at least 1");
        }
        if self.transfer.max_concurrent_tasks == 0 {
            return bad("max_concurrent_tasks must be at least 1");
        }
        if let Some(eq) = &self.elastic_queue {
            if eq.min_nodes == 0 || eq.min_nodes > eq.max_nodes {
                return bad("elastic_queue needs 1 <= min_nodes <= max_nodes");
            }
            if eq.min_walltime == 0 || eq.min_walltime > eq.max_walltime {
                return bad("elastic_queue needs 1 <= min_walltime <= max_walltime");
            }
            if eq.max_total_nodes.is_some_and(|t| t < eq.min_nodes) {
                return bad("elastic_queue max_total_nodes is below min_nodes");
            }
            if let Some(p) = self.queue_policies.get(&eq.queue) {
                if eq.max_nodes > p.max_nodes || eq.max_walltime > p.max_walltime {
                    return bad("elastic_queue exceeds its queue policy");
                }
            }
        }
        if self.launcher.max_tasks_per_node == 0 || self.launcher.cores_per_node == 0 {
            return bad("launcher needs at least one core and one task slot per node");
        }
        Ok(())
    }

    pub fn from_yaml(text: &str) -> Result<Self, ConfigError> {
        let cfg: SiteConfig = serde_yaml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_yaml(&std::fs::read_to_string(path)?)
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("settings serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_yaml() {
        let mut cfg = SiteConfig { elastic_queue: Some(ElasticQueueConfig::default()), ..Default::default() };
        cfg.queue_policies.insert("default".into(), QueuePolicy::default());
        assert_eq!(SiteConfig::from_yaml(&cfg.to_yaml()).unwrap(), cfg);
    }

    #[test]
    fn partial_yaml_fills_defaults() {
        let cfg = SiteConfig::from_yaml(
            "sync_interval: 5\ntransfer:\n  transfer_batch_size: 32\n  trusted_remote_endpoints: [aps-dtn]\n",
        )
        .unwrap();
        assert_eq!(cfg.transfer.transfer_batch_size, 32);
        assert_eq!(cfg.transfer.max_concurrent_tasks, 3);
        assert!(cfg.transfer.is_trusted("aps-dtn") && !cfg.transfer.is_trusted("elsewhere"));
    }

    #[test]
    fn invalid_ranges_are_rejected() {
        for y in [
            "transfer:\n  transfer_batch_size: 0\n",
            "elastic_queue:\n  min_nodes: 9\n  max_nodes: 8\n",
            "elastic_queue:\n  min_walltime: 90\n  max_walltime: 60\n",
            "sync_interval: 0\n",
        ] {
            assert!(matches!(SiteConfig::from_yaml(y), Err(ConfigError::Invalid(_))), "{y}");
        }
    }
}
