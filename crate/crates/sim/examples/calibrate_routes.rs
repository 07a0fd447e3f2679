//! Bisects the inbound route rate until the steady staged-in rate matches a
//! target, with compute out of the picture.
//!
//! usage: calibrate_routes <target per min> [template.yaml]

use conduit_sim::{run_scenario, Scenario};

fn staged_rate(base: &Scenario, rate: f64) -> f64 {
    let mut sc = base.clone();
    sc.routes[0].rate = rate;
    let out = run_scenario(&sc).expect("run");
    out.metrics.sites[0].little.map(|l| l.lambda * 60.0).unwrap_or(0.0)
}

fn main() {
    let mut args = std::env::args().skip(1);
    let target: f64 = args.next().and_then(|a| a.parse().ok()).expect("target rate per minute");
    let path = args.next().unwrap_or_else(|| "crates/sim/scenarios/calibrate.yaml".into());
    let base = Scenario::load(std::path::Path::new(&path)).expect("scenario");
    let (mut lo, mut hi): (f64, f64) = (1.0, 2000.0);
    for _ in 0..30 {
        let mid = (lo * hi).sqrt();
        let got = staged_rate(&base, mid);
        println!("rate {mid:9.3} MB/s -> {got:7.3}/min");
        if got < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo < 1.002 {
            break;
        }
    }
    println!("calibrated inbound rate {:.2} MB/s", (lo * hi).sqrt());
}
