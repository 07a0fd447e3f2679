//! Fluid model of wide-area transfers.
//!
//! A task moving `n` files runs at most at `rate * min(n, streams) / streams`.
//! The route as a whole carries at most `capacity_factor * rate`, shared
//! max-min fairly between the tasks currently moving bytes. At most
//! `max_active_tasks` tasks are active on a route; later ones wait in FIFO
//! order. Every task pays the route latency when it becomes active.
//!
//! Routes advance lazily: state is brought up to date only when a task on
//! the route is submitted or polled, so the model costs nothing between
//! observations and its answers do not depend on how often it is polled.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::profile::{ProfileError, RouteModel};

/// Residual bytes below which a task counts as complete.
const EPS_BYTES: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TaskStatus {
    Queued,
    Active,
    Done { at: f64 },
}

/// A window during which a route (or every route) moves no bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stall {
    pub start: f64,
    pub end: f64,
    /// `(src, dst)`; `None` stalls every route.
    pub route: Option<(String, String)>,
}

#[derive(Debug, Clone)]
struct Task {
    route: usize,
    files: usize,
    remaining: f64,
    submitted: f64,
    /// Bytes start flowing at this time once the task is active.
    flowing_from: Option<f64>,
    done_at: Option<f64>,
}

#[derive(Debug, Clone)]
struct Route {
    model: RouteModel,
    active: Vec<usize>,
    queue: VecDeque<usize>,
    clock: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Fabric {
    routes: Vec<Route>,
    index: BTreeMap<(String, String), usize>,
    tasks: Vec<Task>,
    stalls: Vec<(Option<usize>, f64, f64)>,
}

/// Max-min fair shares of `capacity` between tasks with the given caps.
pub fn water_fill(caps: &[f64], capacity: f64) -> Vec<f64> {
    let mut order: Vec<usize> = (0..caps.len()).collect();
    order.sort_by(|&a, &b| caps[a].total_cmp(&caps[b]));
    let mut out = vec![0.0; caps.len()];
    let mut left = capacity;
    for (k, &i) in order.iter().enumerate() {
        let share = left / (caps.len() - k) as f64;
        out[i] = caps[i].min(share);
        left -= out[i];
    }
    out
}

impl Fabric {
    pub fn new(routes: &[RouteModel]) -> Result<Self, ProfileError> {
        let mut f = Fabric::default();
        for r in routes {
            r.validate()?;
            let key = (r.src.clone(), r.dst.clone());
            if f.index.contains_key(&key) {
                return Err(ProfileError::Invalid(format!("route {}->{} given twice", r.src, r.dst)));
            }
            f.index.insert(key, f.routes.len());
            f.routes.push(Route { model: r.clone(), active: Vec::new(), queue: VecDeque::new(), clock: 0.0 });
        }
        Ok(f)
    }

    pub fn add_stall(&mut self, stall: &Stall) -> Result<(), ProfileError> {
        let route = match &stall.route {
            Some(key) => Some(
                *self
                    .index
                    .get(key)
                    .ok_or_else(|| ProfileError::Invalid(format!("stall names unknown route {}->{}", key.0, key.1)))?,
            ),
            None => None,
        };
        self.stalls.push((route, stall.start, stall.end));
        Ok(())
    }

    pub fn has_route(&self, src: &str, dst: &str) -> bool {
        self.index.contains_key(&(src.to_string(), dst.to_string()))
    }

    /// Queues a task and returns its id. `now` is in seconds on the caller's
    /// time axis and must not go backwards per route.
    pub fn submit(&mut self, src: &str, dst: &str, files: usize, bytes: f64, now: f64) -> Option<usize> {
        let r = *self.index.get(&(src.to_string(), dst.to_string()))?;
        self.advance(r, now);
        let id = self.tasks.len();
        self.tasks.push(Task {
            route: r,
            files: files.max(1),
            remaining: bytes.max(0.0),
            submitted: now,
            flowing_from: None,
            done_at: None,
        });
        self.routes[r].queue.push_back(id);
        self.settle(r, now);
        Some(id)
    }

    pub fn poll(&mut self, task: usize, now: f64) -> Option<TaskStatus> {
        let r = self.tasks.get(task)?.route;
        self.advance(r, now);
        let t = &self.tasks[task];
        Some(match (t.done_at, t.flowing_from) {
            (Some(at), _) => TaskStatus::Done { at },
            (None, Some(_)) => TaskStatus::Active,
            (None, None) => TaskStatus::Queued,
        })
    }

    pub fn submitted_at(&self, task: usize) -> Option<f64> {
        self.tasks.get(task).map(|t| t.submitted)
    }

    fn stalled(&self, r: usize, t: f64) -> bool {
        self.stalls.iter().any(|&(route, s, e)| route.is_none_or(|x| x == r) && s <= t && t < e)
    }

    fn next_stall_edge(&self, r: usize, t: f64) -> f64 {
        self.stalls
            .iter()
            .filter(|(route, _, _)| route.is_none_or(|x| x == r))
            .flat_map(|&(_, s, e)| [s, e])
            .filter(|&x| x > t)
            .fold(f64::INFINITY, f64::min)
    }

    /// Retires finished tasks and activates queued ones, at time `t`.
    fn settle(&mut self, r: usize, t: f64) {
        loop {
            let mut changed = false;
            let active = std::mem::take(&mut self.routes[r].active);
            for id in active {
                let task = &mut self.tasks[id];
                let flowing = task.flowing_from.is_some_and(|f| f <= t);
                if flowing && task.remaining <= EPS_BYTES {
                    task.done_at = Some(t);
                    changed = true;
                } else {
                    self.routes[r].active.push(id);
                }
            }
            let route = &mut self.routes[r];
            while route.active.len() < route.model.max_active_tasks {
                let Some(id) = route.queue.pop_front() else { break };
                self.tasks[id].flowing_from = Some(t + route.model.latency);
                route.active.push(id);
                changed = true;
            }
            if !changed {
                break;
            }
        }
    }

    fn advance(&mut self, r: usize, to: f64) {
        let mut t = self.routes[r].clock;
        if to <= t {
            return;
        }
        loop {
            self.settle(r, t);
            if t >= to {
                break;
            }
            let route = &self.routes[r];
            let flowing: Vec<usize> =
                route.active.iter().copied().filter(|&id| self.tasks[id].flowing_from.is_some_and(|f| f <= t)).collect();
            let rates = if self.stalled(r, t) {
                vec![0.0; flowing.len()]
            } else {
                let caps: Vec<f64> = flowing.iter().map(|&id| route.model.task_cap(self.tasks[id].files)).collect();
                water_fill(&caps, route.model.capacity())
            };
            let mut next = to.min(self.next_stall_edge(r, t));
            for &id in &route.active {
                match self.tasks[id].flowing_from {
                    Some(f) if f > t => next = next.min(f),
                    _ => {}
                }
            }
            for (k, &id) in flowing.iter().enumerate() {
                if rates[k] > 0.0 {
                    next = next.min(t + self.tasks[id].remaining / rates[k]);
                }
            }
            let dt = next - t;
            for (k, &id) in flowing.iter().enumerate() {
                let task = &mut self.tasks[id];
                task.remaining = (task.remaining - rates[k] * dt).max(0.0);
                if rates[k] > 0.0 && task.remaining / rates[k] < 1e-9 {
                    task.remaining = 0.0;
                }
            }
            t = next;
        }
        self.routes[r].clock = to;
    }
}
