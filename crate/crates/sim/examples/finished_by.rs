//! Counts FINISHED jobs up to a cutoff for each scenario given.
//!
//! usage: finished_by <minutes> <scenario.yaml>...

use conduit_core::Timestamp;
use conduit_sim::report::finished_by;
use conduit_sim::{run_scenario, Scenario};

fn main() {
    let mut args = std::env::args().skip(1);
    let minutes: f64 = args.next().and_then(|a| a.parse().ok()).expect("minutes");
    for path in args {
        let sc = Scenario::load(std::path::Path::new(&path)).expect("scenario");
        let out = run_scenario(&sc).expect("run");
        let n = finished_by(&out.events, Timestamp::from_secs_f64(minutes * 60.0));
        println!("{path}: {n} finished in {minutes} min");
    }
}
