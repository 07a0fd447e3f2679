//! Stochastic models of the facility: batch queue delays, application run
//! times and wide-area transfer routes.

use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProfileError {
    #[error("no queue named `{0}` is configured")]
    UnknownQueue(String),
    #[error("no runtime model for app `{0}`")]
    UnknownApp(String),
    #[error("invalid model: {0}")]
    Invalid(String),
}

/// Lognormal queueing delay given by its median and log-space sigma.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueueModel {
    /// Seconds.
    pub median: f64,
    #[serde(default = "QueueModel::default_sigma")]
    pub sigma: f64,
}

impl QueueModel {
    fn default_sigma() -> f64 {
        1.0
    }

    /// Cobalt-like batch queue.
    pub fn cobalt() -> Self {
        QueueModel { median: 273.0, sigma: 1.0 }
    }

    /// Slurm-like queue on a lightly loaded machine.
    pub fn slurm() -> Self {
        QueueModel { median: 2.7, sigma: 0.5 }
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        if !(self.median > 0.0) || !(self.sigma >= 0.0) {
            return Err(ProfileError::Invalid(format!("queue median {} sigma {}", self.median, self.sigma)));
        }
        Ok(())
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.sigma == 0.0 {
            return self.median;
        }
        LogNormal::new(self.median.ln(), self.sigma).expect("validated").sample(rng)
    }
}

/// Normal run time truncated to positive values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuntimeModel {
    pub mean: f64,
    #[serde(default)]
    pub sd: f64,
}

impl RuntimeModel {
    pub fn validate(&self) -> Result<(), ProfileError> {
        if !(self.mean > 0.0) || !(self.sd >= 0.0) {
            return Err(ProfileError::Invalid(format!("runtime mean {} sd {}", self.mean, self.sd)));
        }
        Ok(())
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.sd == 0.0 {
            return self.mean;
        }
        let n = Normal::new(self.mean, self.sd).expect("validated");
        loop {
            let x = n.sample(rng);
            if x > 0.0 {
                return x;
            }
        }
    }
}

/// One directed wide-area route between two endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteModel {
    pub src: String,
    pub dst: String,
    /// MB/s reachable by one task with enough files in flight.
    pub rate: f64,
    /// Fixed per-task overhead in seconds.
    #[serde(default)]
    pub latency: f64,
    #[serde(default = "RouteModel::default_streams")]
    pub per_task_streams: u32,
    #[serde(default = "RouteModel::default_max_active")]
    pub max_active_tasks: usize,
    /// Aggregate route capacity as a multiple of `rate`.
    #[serde(default = "RouteModel::default_capacity")]
    pub capacity_factor: f64,
}

impl RouteModel {
    fn default_streams() -> u32 {
        4
    }
    fn default_max_active() -> usize {
        3
    }
    fn default_capacity() -> f64 {
        2.0
    }

    pub fn new(src: &str, dst: &str, rate: f64, latency: f64) -> Self {
        RouteModel {
            src: src.into(),
            dst: dst.into(),
            rate,
            latency,
            per_task_streams: 4,
            max_active_tasks: 3,
            capacity_factor: 2.0,
        }
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        if !(self.rate > 0.0) || !(self.latency >= 0.0) || self.per_task_streams == 0 || self.max_active_tasks == 0 {
            return Err(ProfileError::Invalid(format!("route {}->{}", self.src, self.dst)));
        }
        if !(self.capacity_factor >= 1.0) {
            return Err(ProfileError::Invalid(format!("route {}->{} capacity below one task", self.src, self.dst)));
        }
        Ok(())
    }

    /// Rate cap of a single task moving `files` files, in bytes per second.
    pub fn task_cap(&self, files: usize) -> f64 {
        let streams = self.per_task_streams as usize;
        self.rate * 1e6 * files.min(streams) as f64 / streams as f64
    }

    pub fn capacity(&self) -> f64 {
        self.rate * 1e6 * self.capacity_factor
    }
}

/// Queue delay for one allocation request.
pub fn sample_queue_delay<R: Rng>(
    queues: &std::collections::BTreeMap<String, QueueModel>,
    queue: &str,
    rng: &mut R,
) -> Result<f64, ProfileError> {
    let q = queues.get(queue).ok_or_else(|| ProfileError::UnknownQueue(queue.to_string()))?;
    Ok(q.sample(rng))
}
