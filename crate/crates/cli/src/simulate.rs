use std::path::{Path, PathBuf};

use clap::Args;
use conduit_sim::{builtin, run_scenario, Scenario};

use crate::error::{CliError, CliResult};

#[derive(Args)]
pub struct RunArgs {
    /// Scenario file (YAML or JSON) or the name of a built-in scenario.
    scenario: String,
    /// Directory for events.jsonl and metrics.json.
    #[arg(long, default_value = "sim-out")]
    out: PathBuf,
    /// Overrides the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn load(spec: &str) -> CliResult<Scenario> {
    let path = Path::new(spec);
    let sc = if path.exists() { Scenario::load(path) } else { builtin(spec) };
    sc.map_err(|e| CliError::invalid(format!("{spec}: {e}")))
}

pub fn run(a: RunArgs) -> CliResult {
    let mut sc = load(&a.scenario)?;
    if let Some(seed) = a.seed {
        sc.seed = seed;
    }
    let out = run_scenario(&sc).map_err(|e| CliError::invalid(e.to_string()))?;
    std::fs::create_dir_all(&a.out)?;
    std::fs::write(a.out.join("events.jsonl"), out.events_jsonl())?;
    std::fs::write(a.out.join("metrics.json"), out.metrics_json())?;
    let m = &out.metrics;
    println!(
        "{} seed {}: {} submitted, {} finished, {} failed, makespan {:.0}s, {} events -> {}",
        m.scenario,
        m.seed,
        m.submitted,
        m.finished,
        m.failed,
        m.makespan_secs,
        out.events.len(),
        a.out.display()
    );
    Ok(())
}
