//! Many independent runs at once. Each run owns its world outright, so the
//! only shared state is the read-only scenario list.

use conduit_core::exec::map_ordered;
use conduit_core::ExecMode;

use crate::scenario::{ConfigError, Scenario};
use crate::world::{run_scenario, RunOutcome};

/// Runs every scenario; results come back in input order whichever mode
/// is used.
pub fn run_many(scenarios: &[Scenario], mode: ExecMode) -> Vec<Result<RunOutcome, ConfigError>> {
    map_ordered(mode, scenarios, run_scenario)
}

/// `base` repeated over `seeds`.
pub fn seed_sweep(base: &Scenario, seeds: impl IntoIterator<Item = u64>) -> Vec<Scenario> {
    seeds
        .into_iter()
        .map(|seed| Scenario { seed, name: format!("{}#{seed}", base.name), ..base.clone() })
        .collect()
}
