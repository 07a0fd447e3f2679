use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Persistent lifecycle state of a job.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum JobState {
    Created,
    AwaitingParents,
    Ready,
    StagedIn,
    Running,
    RunDone,
    Finished,
    RunError,
    RunTimeout,
    RestartReady,
    Failed,
}

use JobState::*;

/// Every permitted `(from, to)` pair. Anything not listed is rejected.
pub const TRANSITIONS: [(JobState, JobState); 14] = [
    (Created, AwaitingParents),
    (Created, Ready),
    (AwaitingParents, Ready),
    (AwaitingParents, Failed),
    (Ready, StagedIn),
    (StagedIn, Running),
    (RestartReady, Running),
    (Running, RunDone),
    (Running, RunError),
    (Running, RunTimeout),
    (RunError, RestartReady),
    (RunError, Failed),
    (RunTimeout, RestartReady),
    (RunDone, Finished),
];

pub fn validate_transition(from: JobState, to: JobState) -> bool {
    matches!(
        (from, to),
        (Created, AwaitingParents)
            | (Created, Ready)
            | (AwaitingParents, Ready)
            | (AwaitingParents, Failed)
            | (Ready, StagedIn)
            | (StagedIn, Running)
            | (RestartReady, Running)
            | (Running, RunDone)
            | (Running, RunError)
            | (Running, RunTimeout)
            | (RunError, RestartReady)
            | (RunError, Failed)
            | (RunTimeout, RestartReady)
            | (RunDone, Finished)
    )
}

impl JobState {
    pub const ALL: [JobState; 11] = [
        Created,
        AwaitingParents,
        Ready,
        StagedIn,
        Running,
        RunDone,
        Finished,
        RunError,
        RunTimeout,
        RestartReady,
        Failed,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(self, Finished | Failed)
    }

    /// States a launcher may acquire from.
    pub fn is_acquirable(self) -> bool {
        matches!(self, StagedIn | RestartReady)
    }

    /// States counted in a site's pending backlog.
    pub fn is_pending(self) -> bool {
        matches!(self, Created | AwaitingParents | Ready | StagedIn | RestartReady)
    }

    /// States whose jobs could use compute nodes right now (elastic queue sizing).
    pub fn is_runnable(self) -> bool {
        matches!(self, Ready | StagedIn | RestartReady)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Created => "CREATED",
            AwaitingParents => "AWAITING_PARENTS",
            Ready => "READY",
            StagedIn => "STAGED_IN",
            Running => "RUNNING",
            RunDone => "RUN_DONE",
            Finished => "FINISHED",
            RunError => "RUN_ERROR",
            RunTimeout => "RUN_TIMEOUT",
            RestartReady => "RESTART_READY",
            Failed => "FAILED",
        }
    }
}

impl fmt::Display for JobState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for JobState {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        JobState::ALL
            .into_iter()
            .find(|st| st.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| ModelError::UnknownState(s.to_string()))
    }
}

/// State a failed run moves to under the bounded retry policy.
pub fn after_run_error(retry_count: u32, max_retries: u32) -> JobState {
    if retry_count < max_retries {
        RestartReady
    } else {
        Failed
    }
}
