//! Node bookkeeping and task packing.

use serde::{Deserialize, Serialize};

use crate::ids::JobId;
use crate::job::ResourceSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeResource {
    pub node_id: u32,
    pub cores_total: u32,
    pub cores_free: u32,
    pub gpus_total: f64,
    pub gpus_free: f64,
    /// Remaining co-scheduling slots under the platform's per-node task limit.
    pub occupancy_slots_free: u32,
    /// Packing count of every task currently on the node. The node holds at
    /// most `min(resident_packing)` tasks.
    #[serde(default)]
    pub resident_packing: Vec<u32>,
}

impl NodeResource {
    pub fn new(node_id: u32, cores: u32, gpus: f64, max_tasks: u32) -> Self {
        NodeResource {
            node_id,
            cores_total: cores,
            cores_free: cores,
            gpus_total: gpus,
            gpus_free: gpus,
            occupancy_slots_free: max_tasks,
            resident_packing: Vec::new(),
        }
    }

    pub fn is_idle(&self) -> bool {
        self.resident_packing.is_empty()
    }

    pub fn task_count(&self) -> usize {
        self.resident_packing.len()
    }

    fn can_host_exclusive(&self, res: &ResourceSpec) -> bool {
        self.is_idle() && self.cores_total >= res.cores_per_node() && self.gpus_total + 1e-9 >= res.gpus_per_node()
    }

    fn can_host_packed(&self, res: &ResourceSpec) -> bool {
        let limit = self.resident_packing.iter().copied().min().unwrap_or(u32::MAX).min(res.node_packing_count);
        self.occupancy_slots_free >= 1
            && (self.task_count() as u32) < limit
            && self.cores_free >= res.cores_per_node()
            && self.gpus_free + 1e-9 >= res.gpus_per_node()
    }

    fn claim(&mut self, res: &ResourceSpec) {
        self.resident_packing.push(if res.is_exclusive() { 1 } else { res.node_packing_count });
        self.occupancy_slots_free = self.occupancy_slots_free.saturating_sub(1);
        self.cores_free -= res.cores_per_node();
        self.gpus_free = (self.gpus_free - res.gpus_per_node()).max(0.0);
    }

    fn release(&mut self, res: &ResourceSpec, slots_total: u32) {
        let p = if res.is_exclusive() { 1 } else { res.node_packing_count };
        if let Some(i) = self.resident_packing.iter().position(|&x| x == p) {
            self.resident_packing.swap_remove(i);
        }
        self.cores_free += res.cores_per_node();
        self.gpus_free = (self.gpus_free + res.gpus_per_node()).min(self.gpus_total);
        self.occupancy_slots_free = (self.occupancy_slots_free + 1).min(slots_total);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskAssignment {
    pub job_id: JobId,
    pub node_ids: Vec<u32>,
    pub ranks_per_node: u32,
    pub cores_per_rank: u32,
    pub gpus_per_rank: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub launch_handle: Option<u64>,
}

/// A set of nodes with first-fit placement and release.
#[derive(Debug, Clone, PartialEq)]
pub struct NodePool {
    nodes: Vec<NodeResource>,
    slots_total: u32,
}

impl NodePool {
    pub fn uniform(count: u32, cores: u32, gpus: f64, max_tasks: u32) -> Self {
        NodePool {
            nodes: (0..count).map(|i| NodeResource::new(i, cores, gpus, max_tasks)).collect(),
            slots_total: max_tasks,
        }
    }

    /// Wraps nodes whose per-node task limit is `max_tasks`.
    pub fn from_nodes(nodes: Vec<NodeResource>, max_tasks: u32) -> Self {
        NodePool { nodes, slots_total: max_tasks }
    }

    pub fn nodes(&self) -> &[NodeResource] {
        &self.nodes
    }

    pub fn slots_total(&self) -> u32 {
        self.slots_total
    }

    pub fn idle_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_idle()).count()
    }

    pub fn is_fully_idle(&self) -> bool {
        self.nodes.iter().all(NodeResource::is_idle)
    }

    /// Whether any node could still take another task.
    pub fn has_free_capacity(&self) -> bool {
        self.nodes.iter().any(|n| {
            n.occupancy_slots_free > 0 && (n.task_count() as u32) < n.resident_packing.iter().copied().min().unwrap_or(u32::MAX)
        })
    }

    pub fn running_tasks(&self) -> usize {
        self.nodes.iter().map(NodeResource::task_count).sum()
    }

    /// Places one task first-fit and deducts its resources.
    pub fn try_place(&mut self, job_id: JobId, res: &ResourceSpec) -> Option<TaskAssignment> {
        let chosen: Vec<usize> = if res.is_exclusive() {
            let idle: Vec<usize> = self
                .nodes
                .iter()
                .enumerate()
                .filter(|(_, n)| n.can_host_exclusive(res))
                .map(|(i, _)| i)
                .take(res.num_nodes as usize)
                .collect();
            if idle.len() < res.num_nodes as usize {
                return None;
            }
            idle
        } else {
            vec![self.nodes.iter().position(|n| n.can_host_packed(res))?]
        };
        for &i in &chosen {
            self.nodes[i].claim(res);
        }
        Some(TaskAssignment {
            job_id,
            node_ids: chosen.iter().map(|&i| self.nodes[i].node_id).collect(),
            ranks_per_node: res.ranks_per_node,
            cores_per_rank: res.threads_per_rank,
            gpus_per_rank: res.gpus_per_rank,
            launch_handle: None,
        })
    }

    pub fn release(&mut self, assignment: &TaskAssignment, res: &ResourceSpec) {
        for id in &assignment.node_ids {
            if let Some(n) = self.nodes.iter_mut().find(|n| n.node_id == *id) {
                n.release(res, self.slots_total);
            }
        }
    }
}

/// First-fit decreasing placement by node count, then cores. Jobs that cannot
/// be fully satisfied are left out of the result.
pub fn pack_assignments(pool: &mut NodePool, jobs: &[(JobId, ResourceSpec)]) -> Vec<TaskAssignment> {
    let mut order: Vec<usize> = (0..jobs.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (&jobs[a].1, &jobs[b].1);
        rb.num_nodes.cmp(&ra.num_nodes).then(rb.cores_per_node().cmp(&ra.cores_per_node()))
    });
    order
        .into_iter()
        .filter_map(|i| pool.try_place(jobs[i].0, &jobs[i].1))
        .collect()
}
