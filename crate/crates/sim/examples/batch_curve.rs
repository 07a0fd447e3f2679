//! Prints the staged-in rate of the batching scenario for each batch size.

use conduit_sim::report::staged_in_rate_per_min;
use conduit_sim::{run_scenario, Scenario};

fn main() {
    let path = std::env::args().nth(1).unwrap_or_else(|| "crates/sim/scenarios/batching.yaml".into());
    let base = Scenario::load(std::path::Path::new(&path)).expect("scenario");
    for b in [1, 2, 4, 8, 16, 32, 64, 128] {
        let mut sc = base.clone();
        sc.sites[0].transfer.batch_size = b;
        let out = run_scenario(&sc).expect("run");
        println!("{b:>4} {:8.2}/min finished {}", staged_in_rate_per_min(&out.events), out.metrics.finished);
    }
}
