//! Runs one scenario file and prints its metrics.

use conduit_sim::{run_scenario, Scenario};

fn main() {
    let path = std::env::args().nth(1).expect("usage: run_scenario <scenario.yaml>");
    let sc = Scenario::load(std::path::Path::new(&path)).expect("scenario");
    let out = run_scenario(&sc).expect("run");
    println!("{}", out.metrics_json());
}
