//! Platform adapters for a plain workstation: tasks run as `sh -c`
//! subprocesses, transfers are file copies, and "allocations" are launcher
//! processes started directly.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};

use conduit_core::{Direction, JobMode};

use crate::platform::{
    AppRunInterface, BackfillWindow, PlatformError, RunStatus, SchedulerInterface, SchedulerState, SpawnSpec,
    SubmitRequest, TransferInterface, TransferTask, TransferTaskState,
};

/// Runs each task as a shell subprocess in its working directory.
#[derive(Debug, Default)]
pub struct LocalProcessRun {
    next: u64,
    children: BTreeMap<u64, Child>,
    exited: BTreeMap<u64, i32>,
}

impl LocalProcessRun {
    pub fn new() -> Self {
        Self::default()
    }
}

impl AppRunInterface for LocalProcessRun {
    fn spawn(&mut self, spec: &SpawnSpec) -> Result<u64, PlatformError> {
        fs::create_dir_all(&spec.workdir).map_err(|e| PlatformError::Rejected(format!("{}: {e}", spec.workdir)))?;
        let out = fs::File::create(Path::new(&spec.workdir).join("job.out"))
            .map_err(|e| PlatformError::Rejected(e.to_string()))?;
        let err = out.try_clone().map_err(|e| PlatformError::Rejected(e.to_string()))?;
        let child = Command::new("sh")
            .arg("-c")
            .arg(&spec.command)
            .current_dir(&spec.workdir)
            .envs(&spec.env)
            .env("CONDUIT_JOB_ID", spec.job_id.to_string())
            .env("CONDUIT_NODE_IDS", spec.node_ids.iter().map(u32::to_string).collect::<Vec<_>>().join(","))
            .stdin(Stdio::null())
            .stdout(out)
            .stderr(err)
            .spawn()
            .map_err(|e| PlatformError::Rejected(e.to_string()))?;
        self.next += 1;
        self.children.insert(self.next, child);
        Ok(self.next)
    }

    fn poll(&mut self, handle: u64) -> RunStatus {
        if let Some(&code) = self.exited.get(&handle) {
            return RunStatus::Exited { code, at: None };
        }
        let Some(child) = self.children.get_mut(&handle) else {
            return RunStatus::Exited { code: -1, at: None };
        };
        match child.try_wait() {
            Ok(None) => RunStatus::Running,
            Ok(Some(status)) => {
                let code = status.code().unwrap_or(-1);
                self.children.remove(&handle);
                self.exited.insert(handle, code);
                RunStatus::Exited { code, at: None }
            }
            Err(_) => RunStatus::Exited { code: -1, at: None },
        }
    }

    fn terminate(&mut self, handle: u64) {
        if let Some(mut child) = self.children.remove(&handle) {
            let _ = child.kill();
            let _ = child.wait();
            self.exited.insert(handle, -9);
        }
    }
}

impl Drop for LocalProcessRun {
    fn drop(&mut self) {
        for child in self.children.values_mut() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Copies files synchronously. Remote URIs are `endpoint:path`; a known
/// endpoint maps to a root directory, otherwise the path is used as is.
#[derive(Debug, Clone)]
pub struct LocalCopyTransfer {
    data_root: PathBuf,
    endpoints: BTreeMap<String, PathBuf>,
    next: u64,
    outcomes: BTreeMap<String, TransferTaskState>,
}

impl LocalCopyTransfer {
    pub fn new(data_root: impl Into<PathBuf>) -> Self {
        LocalCopyTransfer { data_root: data_root.into(), endpoints: BTreeMap::new(), next: 0, outcomes: BTreeMap::new() }
    }

    pub fn with_endpoint(mut self, name: impl Into<String>, root: impl Into<PathBuf>) -> Self {
        self.endpoints.insert(name.into(), root.into());
        self
    }

    fn remote_path(&self, uri: &str) -> PathBuf {
        let (ep, path) = uri.split_once(':').unwrap_or(("", uri));
        match self.endpoints.get(ep) {
            Some(root) => root.join(path.trim_start_matches('/')),
            None => PathBuf::from(path),
        }
    }

    fn copy(from: &Path, to: &Path) -> std::io::Result<()> {
        if let Some(dir) = to.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::copy(from, to).map(|_| ())
    }
}

impl TransferInterface for LocalCopyTransfer {
    fn submit_task(&mut self, task: &TransferTask) -> Result<String, PlatformError> {
        self.next += 1;
        let task_ref = format!("local-{}", self.next);
        let mut state = TransferTaskState::Done;
        for item in &task.items {
            let local = self.data_root.join(&item.local_path);
            let remote = self.remote_path(&item.remote_uri);
            let res = match task.direction {
                Direction::In => Self::copy(&remote, &local),
                Direction::Out => Self::copy(&local, &remote),
            };
            if let Err(e) = res {
                log::warn!("copy for item {} failed: {e}", item.item_id);
                state = TransferTaskState::Failed;
            }
        }
        self.outcomes.insert(task_ref.clone(), state);
        Ok(task_ref)
    }

    fn poll_task(&mut self, task_ref: &str) -> Result<TransferTaskState, PlatformError> {
        self.outcomes
            .get(task_ref)
            .copied()
            .ok_or_else(|| PlatformError::Rejected(format!("unknown task {task_ref}")))
    }
}

/// Stands in for a batch scheduler by starting the launcher command
/// directly. The template may use `{batchjob_id}`, `{num_nodes}`,
/// `{wall_time}` (minutes) and `{job_mode}`.
#[derive(Debug)]
pub struct LocalScheduler {
    command: String,
    next: u64,
    running: BTreeMap<String, Child>,
    done: BTreeMap<String, SchedulerState>,
}

impl LocalScheduler {
    pub fn new(command: impl Into<String>) -> Self {
        LocalScheduler { command: command.into(), next: 0, running: BTreeMap::new(), done: BTreeMap::new() }
    }

    fn render(&self, req: &SubmitRequest) -> String {
        let mode = match req.job_mode {
            JobMode::PerTaskSpawn => "per-task-spawn",
            JobMode::NodeResident => "node-resident",
        };
        self.command
            .replace("{batchjob_id}", &req.batchjob_id.to_string())
            .replace("{num_nodes}", &req.num_nodes.to_string())
            .replace("{wall_time}", &req.wall_time.to_string())
            .replace("{job_mode}", mode)
    }
}

impl SchedulerInterface for LocalScheduler {
    fn submit(&mut self, req: &SubmitRequest) -> Result<String, PlatformError> {
        if self.command.trim().is_empty() {
            return Err(PlatformError::Rejected("no launcher command configured".into()));
        }
        let child = Command::new("sh")
            .arg("-c")
            .arg(self.render(req))
            .stdin(Stdio::null())
            .spawn()
            .map_err(|e| PlatformError::Unavailable(e.to_string()))?;
        self.next += 1;
        let id = format!("local.{}", self.next);
        self.running.insert(id.clone(), child);
        Ok(id)
    }

    fn poll(&mut self) -> Result<BTreeMap<String, SchedulerState>, PlatformError> {
        let mut finished = Vec::new();
        for (id, child) in self.running.iter_mut() {
            if let Ok(Some(status)) = child.try_wait() {
                let s = if status.success() { SchedulerState::Finished } else { SchedulerState::Failed };
                finished.push((id.clone(), s));
            }
        }
        for (id, s) in finished {
            self.running.remove(&id);
            self.done.insert(id, s);
        }
        let mut out: BTreeMap<String, SchedulerState> =
            self.running.keys().map(|k| (k.clone(), SchedulerState::Running)).collect();
        out.extend(self.done.iter().map(|(k, v)| (k.clone(), *v)));
        Ok(out)
    }

    fn delete(&mut self, scheduler_id: &str) -> Result<(), PlatformError> {
        if let Some(mut child) = self.running.remove(scheduler_id) {
            let _ = child.kill();
            let _ = child.wait();
            self.done.insert(scheduler_id.to_string(), SchedulerState::Failed);
        }
        Ok(())
    }

    fn backfill_windows(&mut self) -> Result<Vec<BackfillWindow>, PlatformError> {
        Ok(Vec::new())
    }
}

impl Drop for LocalScheduler {
    fn drop(&mut self) {
        for child in self.running.values_mut() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}
