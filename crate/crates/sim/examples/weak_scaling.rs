//! Per-node task rate of the weak-scaling pair and their ratio.

use conduit_sim::report::run_span_secs;
use conduit_sim::{run_scenario, Scenario};

fn per_node_rate(path: &str, spawn_cost: Option<f64>) -> f64 {
    let mut sc = Scenario::load(std::path::Path::new(path)).expect("scenario");
    if let Some(c) = spawn_cost {
        sc.sites[0].launcher.spawn_cost = c;
    }
    let out = run_scenario(&sc).expect("run");
    let nodes: u32 = sc.sites[0].allocations.iter().map(|a| a.nodes).sum();
    out.metrics.finished as f64 / run_span_secs(&out.events) / nodes as f64
}

fn main() {
    let cost = std::env::args().nth(1).and_then(|a| a.parse().ok());
    let small = per_node_rate("crates/sim/scenarios/weak-64.yaml", cost);
    let large = per_node_rate("crates/sim/scenarios/weak-512.yaml", cost);
    println!("64: {small:.5}/s/node  512: {large:.5}/s/node  efficiency {:.3}", large / small);
}
