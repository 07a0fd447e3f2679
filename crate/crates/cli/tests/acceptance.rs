//! Acceptance gate. Each criterion prints one PASS/FAIL line; the process
//! exits non-zero if any fails.
//!
//! The figures checked here are recomputed from the raw event logs by small
//! oracles in this file rather than taken from the simulator's own metrics,
//! so a bookkeeping bug in the library cannot pass its own test.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Instant;

use conduit_client::HttpApi;
use conduit_core::metrics::StageDurations;
use conduit_core::{
    apply_event, validate_transition, AppId, AppSpec, EventRecord, JobDraft, JobId, JobRecord, JobState, ManualClock,
    NodeResource, ParameterSpec, SessionId, SiteId, Timestamp,
};
use conduit_service::http::spawn_server;
use conduit_service::{
    AcquireRequest, Api, ApiError, CreateSession, ErrorKind, EventFilter, JobFilter, JobQuery, JobUpdate, RegisterSite,
    Service, StoreConfig, TransferFilter,
};
use conduit_sim::{builtin, run_lease_stress, run_scenario, Phase, RunOutcome, Scenario, StressConfig};
use conduit_sim::Strategy as Routing;
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, RngAlgorithm, TestRng, TestRunner};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::Value;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

/// Event logs of the simulated criteria, kept for the determinism rerun.
#[derive(Default)]
struct Logs {
    runs: Vec<(String, Scenario, String)>,
}

impl Logs {
    fn run(&mut self, label: &str, sc: Scenario) -> RunOutcome {
        let out = run_scenario(&sc).expect("scenario runs");
        self.runs.push((label.to_string(), sc, out.events_jsonl()));
        out
    }
}

fn secs(t: Timestamp) -> f64 {
    t.0 as f64 / 1e6
}

fn by_job(events: &[EventRecord]) -> BTreeMap<JobId, Vec<&EventRecord>> {
    let mut m: BTreeMap<JobId, Vec<&EventRecord>> = BTreeMap::new();
    for e in events {
        m.entry(e.job_id).or_default().push(e);
    }
    m
}

fn site_index(out: &RunOutcome, name: &str) -> usize {
    out.record.site_names.iter().position(|n| n == name).expect("site present")
}

fn jobs_at(out: &RunOutcome, name: &str) -> Vec<JobId> {
    let sid = out.record.site_ids[site_index(out, name)];
    out.jobs.iter().filter(|j| j.site_id == sid).map(|j| j.job_id).collect()
}

fn events_of(out: &RunOutcome, ids: &[JobId]) -> Vec<EventRecord> {
    let set: BTreeSet<JobId> = ids.iter().copied().collect();
    out.events.iter().filter(|e| set.contains(&e.job_id)).cloned().collect()
}

// ---------------------------------------------------------------- 1

/// The legal edges, written out independently of the library's table.
const EDGES: [(&str, &str); 14] = [
    ("CREATED", "AWAITING_PARENTS"),
    ("CREATED", "READY"),
    ("AWAITING_PARENTS", "READY"),
    ("AWAITING_PARENTS", "FAILED"),
    ("READY", "STAGED_IN"),
    ("STAGED_IN", "RUNNING"),
    ("RESTART_READY", "RUNNING"),
    ("RUNNING", "RUN_DONE"),
    ("RUNNING", "RUN_ERROR"),
    ("RUNNING", "RUN_TIMEOUT"),
    ("RUN_ERROR", "RESTART_READY"),
    ("RUN_ERROR", "FAILED"),
    ("RUN_TIMEOUT", "RESTART_READY"),
    ("RUN_DONE", "FINISHED"),
];

fn state_machine() -> Outcome {
    let t0 = Instant::now();
    let edges: BTreeSet<(JobState, JobState)> =
        EDGES.iter().map(|(a, b)| (a.parse().unwrap(), b.parse().unwrap())).collect();
    ensure!(edges.len() == 14, "oracle lists {} distinct edges", edges.len());
    let mut rejected = 0;
    for from in JobState::ALL {
        for to in JobState::ALL {
            let legal = edges.contains(&(from, to));
            ensure!(validate_transition(from, to) == legal, "{from} -> {to}: library says {}", !legal);
            if !legal {
                rejected += 1;
            }
        }
    }

    let mut rng = StdRng::seed_from_u64(0x5eed);
    let n_jobs = 10_000;
    let mut jobs: Vec<JobRecord> = Vec::with_capacity(n_jobs);
    let mut log: Vec<EventRecord> = Vec::new();
    let mut refused = 0usize;
    for i in 0..n_jobs {
        let mut job = JobRecord {
            job_id: JobId(i as u64 + 1),
            app_id: AppId(1),
            site_id: SiteId(1),
            workdir: format!("w/{i}"),
            parameters: Default::default(),
            resources: Default::default(),
            tags: Default::default(),
            parent_ids: vec![],
            state: JobState::Created,
            retry_count: 0,
            transfer_bindings: Default::default(),
            session_id: None,
            last_event_at: None,
        };
        let mut t = rng.random_range(0..1_000_000i64);
        for _ in 0..rng.random_range(1..40) {
            if job.state.is_terminal() {
                break;
            }
            let to = JobState::ALL[rng.random_range(0..JobState::ALL.len())];
            t += rng.random_range(0..5_000_000i64);
            let before = job.clone();
            match apply_event(&mut job, to, Timestamp(t), Default::default()) {
                Ok(e) => {
                    ensure!(edges.contains(&(before.state, to)), "accepted {} -> {to}", before.state);
                    log.push(e);
                }
                Err(_) => {
                    ensure!(!edges.contains(&(before.state, to)), "refused legal {} -> {to}", before.state);
                    ensure!(job == before, "a refused transition changed the job");
                    refused += 1;
                }
            }
        }
        jobs.push(job);
    }
    // Interleave the per-job streams the way a shared log would, then
    // rebuild every job from the log alone.
    log.sort_by_key(|e| (e.timestamp, e.job_id));
    let mut rebuilt: BTreeMap<JobId, (JobState, Option<Timestamp>)> = BTreeMap::new();
    for e in &log {
        let cur = rebuilt.entry(e.job_id).or_insert((JobState::Created, None));
        ensure!(cur.0 == e.from_state, "job {} log jumps from {} to {}", e.job_id.0, cur.0, e.from_state);
        *cur = (e.to_state, Some(e.timestamp));
    }
    for j in &jobs {
        let r = rebuilt.get(&j.job_id).copied().unwrap_or((JobState::Created, None));
        ensure!(r == (j.state, j.last_event_at), "job {} rebuilt as {:?}, is {:?}", j.job_id.0, r, j.state);
    }
    let elapsed = t0.elapsed().as_secs_f64();
    ensure!(elapsed < 10.0, "took {elapsed:.1}s");
    Ok(format!(
        "14 edges, {rejected} pairs rejected; {n_jobs} jobs, {} events replayed, {refused} illegal steps refused ({elapsed:.2}s)",
        log.len()
    ))
}

// ---------------------------------------------------------------- 2

fn lease_exclusivity() -> Outcome {
    let t0 = Instant::now();
    let cfg = StressConfig::default();
    ensure!(cfg.workers == 8 && cfg.rounds == 1000, "default config is {} x {}", cfg.workers, cfg.rounds);
    let rep = run_lease_stress(&cfg);
    let elapsed = t0.elapsed().as_secs_f64();
    let terminal: usize = rep.census.iter().filter(|(s, _)| s.is_terminal()).map(|(_, n)| n).sum();
    ensure!(rep.overlaps == 0, "{} overlapping acquisitions", rep.overlaps);
    ensure!(rep.crashes > 0, "no session was ever forced to expire");
    ensure!(terminal == rep.submitted, "terminal census {terminal} of {} submitted: {:?}", rep.submitted, rep.census);
    ensure!(rep.rounds_run >= cfg.rounds, "only {} rounds ran", rep.rounds_run);
    ensure!(elapsed < 60.0, "took {elapsed:.1}s");
    Ok(format!(
        "8 launchers x {} rounds: 0 overlaps, {} completions, {} forced expiries, {} lease losses, {terminal}/{} terminal ({elapsed:.1}s)",
        rep.rounds_run,
        rep.completions,
        rep.crashes, rep.lease_losses, rep.submitted
    ))
}

// ---------------------------------------------------------------- 3

/// RUN_TIMEOUT, then RESTART_READY, then RUNNING, in that order.
fn shows_recovery(history: &[&EventRecord]) -> bool {
    let want = [JobState::RunTimeout, JobState::RestartReady, JobState::Running];
    let mut k = 0;
    for e in history {
        if k < 3 && e.to_state == want[k] {
            k += 1;
        }
    }
    k == 3
}

fn stress_replay(logs: &mut Logs) -> Outcome {
    let sc = builtin("stress").unwrap();
    ensure!(
        sc.client.phases
            == vec![
                Phase::Constant { rate: 1.0, start: 0.0, end: 900.0 },
                Phase::Constant { rate: 3.0, start: 900.0, end: 1800.0 },
            ],
        "phases are {:?}",
        sc.client.phases
    );
    ensure!(sc.failures.kill_launcher_every == Some(120.0), "kill period {:?}", sc.failures.kill_launcher_every);
    let el = sc.sites[0].elastic.clone().expect("elastic queue");
    ensure!(
        el.min_nodes == 8 && el.max_nodes == 8 && el.min_walltime == 20 && el.max_walltime == 20 && el.max_total_nodes == Some(32),
        "allocations are {el:?}"
    );
    let out = logs.run("stress", sc);

    let submitted = out.record.submitted;
    let finished = out.jobs.iter().filter(|j| j.state == JobState::Finished).count();
    let open = out.jobs.iter().filter(|j| !j.state.is_terminal()).count();
    ensure!(out.jobs.len() == submitted, "{} jobs stored, {submitted} submitted", out.jobs.len());
    ensure!(finished == submitted, "{finished} of {submitted} finished");
    ensure!(open == 0, "{open} jobs still open");
    ensure!(!out.record.killed_jobs.is_empty(), "no launcher was killed with work in hand");

    let hist = by_job(&out.events);
    let killed: BTreeSet<JobId> = out.record.killed_jobs.iter().copied().collect();
    for j in &killed {
        ensure!(shows_recovery(&hist[j]), "killed job {} shows no timeout/restart/run sequence", j.0);
    }
    // The service's event log alone reproduces every stored job state.
    for j in &out.jobs {
        let last = hist.get(&j.job_id).and_then(|h| h.last()).map(|e| e.to_state);
        ensure!(last == Some(j.state), "job {} log ends in {last:?}, stored {}", j.job_id.0, j.state);
    }
    Ok(format!(
        "{finished}/{submitted} finished, backlog 0, {} kills, {}/{} killed jobs recovered",
        out.record.kills,
        killed.len(),
        killed.len()
    ))
}

// ---------------------------------------------------------------- 4

/// Per-job stage durations in seconds straight from the timestamps.
fn stages(history: &[&EventRecord]) -> Option<[f64; 6]> {
    let at = |s: JobState| history.iter().filter(|e| e.to_state == s).map(|e| e.timestamp).next_back();
    let first = |s: JobState| history.iter().find(|e| e.to_state == s).map(|e| e.timestamp);
    let (ready, staged, running, done, fin) =
        (first(JobState::Ready)?, first(JobState::StagedIn)?, at(JobState::Running)?, at(JobState::RunDone)?, at(JobState::Finished)?);
    let si = secs(staged) - secs(ready);
    let rd = secs(running) - secs(staged);
    let run = secs(done) - secs(running);
    let so = secs(fin) - secs(done);
    Some([si, rd, run, so, secs(fin) - secs(ready), si + rd + so])
}

fn within(x: f64, target: f64, rel: f64) -> bool {
    (x - target).abs() <= rel * target
}

fn latency_calibration() -> Outcome {
    let sc = builtin("latency").unwrap();
    let rt = &sc.sites[0].apps[0].runtime;
    ensure!(rt.mean == 18.6, "run profile mean {}", rt.mean);
    let out = run_scenario(&sc).unwrap();
    let mut sums = [0.0; 6];
    let mut n = 0;
    for (id, h) in by_job(&out.events) {
        let Some(s) = stages(&h) else { continue };
        let d = StageDurations::from_events(id, &h).ok_or(format!("library skipped complete job {}", id.0))?;
        ensure!(d.overhead == d.stage_in + d.run_delay + d.stage_out, "job {}: overhead identity broken", id.0);
        ensure!(d.time_to_solution == d.overhead + d.run, "job {}: time-to-solution identity broken", id.0);
        ensure!((d.overhead as f64 / 1e6 - s[5]).abs() < 1e-6, "job {}: library overhead disagrees with oracle", id.0);
        for k in 0..6 {
            sums[k] += s[k];
        }
        n += 1;
    }
    ensure!(n >= 1000, "only {n} complete jobs");
    let m: Vec<f64> = sums.iter().map(|s| s / n as f64).collect();
    let (overhead, tts) = (m[5], m[4]);
    ensure!(within(overhead, 34.1, 0.05), "mean overhead {overhead:.2}s, want 34.1 +-5%");
    ensure!(within(tts, 52.7, 0.05), "mean time to solution {tts:.2}s, want 52.7 +-5%");
    Ok(format!(
        "{n} jobs: stage_in {:.2} run_delay {:.2} run {:.2} stage_out {:.2}; overhead {overhead:.2} (34.1), TTS {tts:.2} (52.7); identity exact",
        m[0], m[1], m[2], m[3]
    ))
}

// ---------------------------------------------------------------- 5

/// STAGED_IN per minute from the first READY to the last STAGED_IN.
fn arrival_rate(events: &[EventRecord]) -> f64 {
    let ready = events.iter().filter(|e| e.to_state == JobState::Ready).map(|e| secs(e.timestamp)).fold(f64::MAX, f64::min);
    let staged: Vec<f64> = events.iter().filter(|e| e.to_state == JobState::StagedIn).map(|e| secs(e.timestamp)).collect();
    let last = staged.iter().copied().fold(f64::MIN, f64::max);
    staged.len() as f64 * 60.0 / (last - ready)
}

fn batching(logs: &mut Logs) -> Outcome {
    let base = builtin("batching").unwrap();
    ensure!(base.client.phases == vec![Phase::Burst { count: 128, at: 10.0 }], "workload is {:?}", base.client.phases);
    let sizes = [1usize, 2, 4, 8, 16, 32, 64, 128];
    let mut rates = Vec::new();
    for b in sizes {
        let mut sc = base.clone();
        sc.sites[0].transfer.batch_size = b;
        let out = logs.run(&format!("batching/{b}"), sc);
        ensure!(out.metrics.finished == 128, "batch {b}: {} finished", out.metrics.finished);
        rates.push(arrival_rate(&out.events));
    }
    for w in 0..4 {
        ensure!(rates[w] < rates[w + 1], "rate does not rise from {} to {}: {rates:?}", sizes[w], sizes[w + 1]);
    }
    ensure!(rates[7] < rates[6], "batch 128 ({:.1}) is not below batch 64 ({:.1})", rates[7], rates[6]);
    let shown: Vec<String> = sizes.iter().zip(&rates).map(|(b, r)| format!("{b}:{r:.1}")).collect();
    Ok(format!("jobs/min by batch size {}", shown.join(" ")))
}

// ---------------------------------------------------------------- 6

struct Little {
    lambda_per_min: f64,
    w: f64,
    l_expected: f64,
    l_observed: f64,
    utilization: f64,
}

/// Little's-law figures over the middle 80% of the log on `nodes` slots.
fn little(out: &RunOutcome, nodes: f64) -> Result<Little, String> {
    let ev = &out.events;
    let lo = ev.iter().map(|e| secs(e.timestamp)).fold(f64::MAX, f64::min);
    let hi = ev.iter().map(|e| secs(e.timestamp)).fold(f64::MIN, f64::max);
    let (a, b) = (lo + 0.1 * (hi - lo), hi - 0.1 * (hi - lo));
    let cap = &out.record.capacity[&0];
    let cap_at = |t: f64| cap.iter().rfind(|(ct, _)| secs(*ct) <= t).map_or(0.0, |c| c.1);
    ensure!(
        cap.iter().all(|(ct, c)| secs(*ct) <= a || secs(*ct) >= b || *c == nodes) && cap_at(a) == nodes,
        "capacity is not {nodes} nodes across the window: {cap:?}"
    );
    let arrivals = ev.iter().filter(|e| e.to_state == JobState::StagedIn && (a..b).contains(&secs(e.timestamp))).count();
    let lambda = arrivals as f64 / (b - a);
    let mut busy = 0.0;
    let mut runs = Vec::new();
    for h in by_job(ev).values() {
        let mut start = None;
        for e in h {
            match e.to_state {
                JobState::Running => start = Some(secs(e.timestamp)),
                JobState::RunDone | JobState::RunError | JobState::RunTimeout => {
                    if let Some(s) = start.take() {
                        let t = secs(e.timestamp);
                        busy += (t.min(b) - s.max(a)).max(0.0);
                        if (a..b).contains(&s) {
                            runs.push(t - s);
                        }
                    }
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            busy += (b - s.max(a)).max(0.0);
        }
    }
    ensure!(!runs.is_empty(), "no runs in the window");
    let w = runs.iter().sum::<f64>() / runs.len() as f64;
    let l_observed = busy / (b - a);
    Ok(Little {
        lambda_per_min: lambda * 60.0,
        w,
        l_expected: lambda * w,
        l_observed,
        utilization: l_observed / nodes,
    })
}

fn littles_law(logs: &mut Logs) -> Outcome {
    let c = logs.run("littles-compute", builtin("littles-compute").unwrap());
    let t = logs.run("littles-transfer", builtin("littles-transfer").unwrap());
    let (c, t) = (little(&c, 32.0)?, little(&t, 32.0)?);
    let gap = |l: &Little| (l.l_observed - l.l_expected).abs() / l.l_expected;
    ensure!(c.utilization >= 0.95, "compute-bound utilization {:.3}", c.utilization);
    let expected = t.l_expected / 32.0;
    ensure!(
        (t.utilization - expected).abs() <= 0.07 * expected,
        "transfer-bound utilization {:.3}, lambda*W/32 = {expected:.3}",
        t.utilization
    );
    ensure!(gap(&c) <= 0.05 && gap(&t) <= 0.05, "gaps {:.3} and {:.3}", gap(&c), gap(&t));
    Ok(format!(
        "compute: lambda {:.2}/min W {:.1}s util {:.3} gap {:.3}; transfer: lambda {:.2}/min W {:.1}s util {:.3} vs {expected:.3} gap {:.3}",
        c.lambda_per_min,
        c.w,
        c.utilization,
        gap(&c),
        t.lambda_per_min,
        t.w,
        t.utilization,
        gap(&t)
    ))
}

// ---------------------------------------------------------------- 7

fn finished_before(events: &[EventRecord], limit_secs: f64) -> usize {
    events.iter().filter(|e| e.to_state == JobState::Finished && secs(e.timestamp) <= limit_secs).count()
}

fn staged_rate_at(out: &RunOutcome, site: &str) -> f64 {
    arrival_rate(&events_of(out, &jobs_at(out, site)))
}

fn multisite(logs: &mut Logs) -> Outcome {
    let all = logs.run("multisite", builtin("multisite").unwrap());
    let alone = logs.run("theta-alone", builtin("theta-alone").unwrap());
    let cutoff = 19.0 * 60.0;
    let agg = finished_before(&all.events, cutoff);
    let slow = finished_before(&alone.events, cutoff);
    ensure!(slow > 0, "the slowest site alone finished nothing in 19 min");
    let ratio = agg as f64 / slow as f64;
    let rates: Vec<String> =
        ["theta", "summit", "cori"].iter().map(|s| format!("{s} {:.1}", staged_rate_at(&all, s))).collect();
    ensure!((3.5..=5.0).contains(&ratio), "ratio {ratio:.2} ({agg} vs {slow})");
    Ok(format!("19 min: {agg} across three sites vs {slow} alone, ratio {ratio:.2}; staged-in/min {}", rates.join(", ")))
}

// ---------------------------------------------------------------- 8

struct Routed {
    placed: BTreeMap<String, usize>,
    cori_per_min: f64,
}

fn routed(out: &RunOutcome) -> Routed {
    let mut placed = BTreeMap::new();
    for s in ["theta", "summit", "cori"] {
        placed.insert(s.to_string(), jobs_at(out, s).len());
    }
    let first = out.events.iter().map(|e| secs(e.timestamp)).fold(f64::MAX, f64::min);
    let last_fin =
        out.events.iter().filter(|e| e.to_state == JobState::Finished).map(|e| secs(e.timestamp)).fold(f64::MIN, f64::max);
    let cori_done = finished_before(&events_of(out, &jobs_at(out, "cori")), f64::MAX);
    Routed { placed, cori_per_min: cori_done as f64 * 60.0 / (last_fin - first) }
}

fn routing(logs: &mut Logs) -> Outcome {
    let rr_sc = builtin("routing-rr").unwrap();
    let sb_sc = builtin("routing-sb").unwrap();
    let pattern = vec![Phase::Batches { size: 16, every: 8.0, start: 0.0, end: 600.0 }];
    ensure!(rr_sc.client.phases == pattern && sb_sc.client.phases == pattern, "submission pattern differs");
    ensure!(rr_sc.client.strategy == Routing::RoundRobin && sb_sc.client.strategy == Routing::ShortestBacklog, "strategies");
    let rr = routed(&logs.run("routing-rr", rr_sc));
    let sb = routed(&logs.run("routing-sb", sb_sc));
    ensure!(sb.placed["theta"] < rr.placed["theta"], "theta got {} under SB vs {} under RR", sb.placed["theta"], rr.placed["theta"]);
    let gain = sb.cori_per_min / rr.cori_per_min - 1.0;
    ensure!(gain >= 0.05, "cori throughput gain {:.1}%", gain * 100.0);
    Ok(format!(
        "theta/summit/cori placed RR {}/{}/{} SB {}/{}/{}; cori {:.2} -> {:.2} jobs/min (+{:.0}%)",
        rr.placed["theta"],
        rr.placed["summit"],
        rr.placed["cori"],
        sb.placed["theta"],
        sb.placed["summit"],
        sb.placed["cori"],
        rr.cori_per_min,
        sb.cori_per_min,
        gain * 100.0
    ))
}

// ---------------------------------------------------------------- 9

fn per_node_rate(logs: &mut Logs, name: &str, nodes: u32) -> Result<f64, String> {
    let sc = builtin(name).unwrap();
    let site = &sc.sites[0];
    ensure!(site.allocations.iter().map(|a| a.nodes).sum::<u32>() == nodes, "{name}: wrong node count");
    ensure!(site.launcher.job_mode == conduit_core::JobMode::PerTaskSpawn, "{name}: not per-task-spawn");
    ensure!(site.apps.iter().all(|a| a.inputs.is_empty() && a.outputs.is_empty()), "{name}: has transfers");
    ensure!(sc.client.phases == vec![Phase::Burst { count: 2 * nodes as usize, at: 0.0 }], "{name}: not 2 tasks per node");
    let out = logs.run(name, sc);
    ensure!(out.metrics.finished == 2 * nodes as usize, "{name}: {} finished", out.metrics.finished);
    let first = out.events.iter().filter(|e| e.to_state == JobState::Running).map(|e| secs(e.timestamp)).fold(f64::MAX, f64::min);
    let last = out.events.iter().filter(|e| e.to_state == JobState::RunDone).map(|e| secs(e.timestamp)).fold(f64::MIN, f64::max);
    Ok(out.metrics.finished as f64 / (last - first) / nodes as f64)
}

fn weak_scaling(logs: &mut Logs) -> Outcome {
    let t0 = Instant::now();
    let small = per_node_rate(logs, "weak-64", 64)?;
    let large = per_node_rate(logs, "weak-512", 512)?;
    let eff = large / small;
    let elapsed = t0.elapsed().as_secs_f64();
    ensure!(eff >= 0.85, "efficiency {eff:.3}");
    ensure!(elapsed < 300.0, "took {elapsed:.0}s");
    Ok(format!("per-node tasks/s 64: {small:.5} 512: {large:.5}, efficiency {eff:.3} ({elapsed:.1}s)"))
}

// ---------------------------------------------------------------- 10

fn determinism(logs: &Logs) -> Outcome {
    ensure!(!logs.runs.is_empty(), "nothing to rerun");
    for (label, sc, first) in &logs.runs {
        let again = run_scenario(sc).unwrap().events_jsonl();
        ensure!(&again == first, "{label}: rerun differs");
    }
    let bytes: usize = logs.runs.iter().map(|r| r.2.len()).sum();
    Ok(format!("{} runs byte-identical on rerun ({bytes} bytes of events)", logs.runs.len()))
}

// ---------------------------------------------------------------- 11

const ROUTES: [(&str, &str); 19] = [
    ("POST", "/auth/login"),
    ("GET", "/sites"),
    ("POST", "/sites"),
    ("GET", "/sites/{id}/backlog"),
    ("POST", "/sites/{id}/apps"),
    ("GET", "/apps"),
    ("GET", "/jobs"),
    ("POST", "/jobs"),
    ("PATCH", "/jobs"),
    ("GET", "/jobs/count"),
    ("GET", "/batch-jobs"),
    ("POST", "/batch-jobs"),
    ("PATCH", "/batch-jobs"),
    ("GET", "/sessions"),
    ("POST", "/sessions"),
    ("POST", "/sessions/{id}/acquire"),
    ("PUT", "/sessions/{id}/heartbeat"),
    ("DELETE", "/sessions/{id}"),
    ("GET", "/events"),
];

/// Fields whose values depend on the clock or the signing key.
fn volatile(key: &str) -> bool {
    key.ends_with("_at") || matches!(key, "access_token" | "heartbeat" | "timestamp" | "last_refresh")
}

fn template(path: &str) -> String {
    let path = path.split('?').next().unwrap();
    path.split('/')
        .map(|seg| if !seg.is_empty() && seg.bytes().all(|b| b.is_ascii_digit()) { "{id}" } else { seg })
        .collect::<Vec<_>>()
        .join("/")
}

/// Same structure and, outside the volatile fields, the same values.
fn conforms(want: &Value, got: &Value, at: &str) -> Result<(), String> {
    match (want, got) {
        (Value::Object(w), Value::Object(g)) => {
            let (wk, gk): (BTreeSet<_>, BTreeSet<_>) = (w.keys().collect(), g.keys().collect());
            ensure!(wk == gk, "{at}: keys {wk:?} vs {gk:?}");
            for (k, v) in w {
                let here = format!("{at}.{k}");
                if volatile(k) {
                    ensure!(
                        std::mem::discriminant(v) == std::mem::discriminant(&g[k]),
                        "{here}: type changed from {v} to {}",
                        g[k]
                    );
                } else {
                    conforms(v, &g[k], &here)?;
                }
            }
            Ok(())
        }
        (Value::Array(w), Value::Array(g)) => {
            ensure!(w.len() == g.len(), "{at}: {} items vs {}", w.len(), g.len());
            w.iter().zip(g).enumerate().try_for_each(|(i, (a, b))| conforms(a, b, &format!("{at}[{i}]")))
        }
        (a, b) => {
            ensure!(a == b, "{at}: {a} vs {b}");
            Ok(())
        }
    }
}

fn golden_replay() -> Result<usize, String> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../service/tests/golden/http_exchange.json");
    let golden: Vec<Value> = serde_json::from_str(&std::fs::read_to_string(path).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let clock = Arc::new(ManualClock::new(Timestamp(1_700_000_000_000_000)));
    let svc = Arc::new(Service::in_memory(StoreConfig { lease_ttl_secs: 30.0, max_retries: 3 }, clock));
    svc.register_user("alice", "pw").unwrap();
    let server = spawn_server(svc, "127.0.0.1:0".parse().unwrap()).map_err(|e| e.to_string())?;
    let http = reqwest::blocking::Client::new();
    let mut token: Option<String> = None;
    let mut covered = BTreeSet::new();
    for (i, x) in golden.iter().enumerate() {
        let req = &x["request"];
        let method = req["method"].as_str().unwrap();
        let p = req["path"].as_str().unwrap();
        let mut rb = http.request(method.parse().unwrap(), format!("{}{p}", server.base_url()));
        if req["authorized"] == Value::Bool(true) {
            rb = rb.bearer_auth(token.as_deref().ok_or("authorized call before any login")?);
        }
        if !req["body"].is_null() {
            rb = rb.json(&req["body"]);
        }
        let resp = rb.send().map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let text = resp.text().map_err(|e| e.to_string())?;
        let body: Value = if text.is_empty() { Value::Null } else { serde_json::from_str(&text).map_err(|e| e.to_string())? };
        ensure!(x["status"] == status, "#{i} {method} {p}: status {status}, golden {}", x["status"]);
        conforms(&x["response"], &body, &format!("#{i} {method} {p}"))?;
        if let Some(t) = body.get("access_token").and_then(Value::as_str) {
            token = Some(t.to_string());
        }
        covered.insert((method.to_string(), template(p)));
    }
    for (m, r) in ROUTES {
        ensure!(covered.contains(&(m.to_string(), r.to_string())), "golden file never calls {m} {r}");
    }
    server.stop().map_err(|e| e.to_string())?;
    Ok(golden.len())
}

#[derive(Debug, Clone)]
enum Probe {
    ListJobs,
    Count,
    Update(u64, JobState),
    CreateJob,
    SyncApps,
    Backlog,
    Events,
    Session,
    Acquire(u64),
    Heartbeat(u64),
    EndSession(u64),
    Transfers,
}

fn probe() -> impl Strategy<Value = Probe> {
    let id = 1u64..4;
    prop_oneof![
        Just(Probe::ListJobs),
        Just(Probe::Count),
        (id.clone(), proptest::sample::select(JobState::ALL.to_vec())).prop_map(|(i, s)| Probe::Update(i, s)),
        Just(Probe::CreateJob),
        Just(Probe::SyncApps),
        Just(Probe::Backlog),
        Just(Probe::Events),
        Just(Probe::Session),
        id.clone().prop_map(Probe::Acquire),
        id.clone().prop_map(Probe::Heartbeat),
        id.prop_map(Probe::EndSession),
        Just(Probe::Transfers),
    ]
}

fn echo() -> AppSpec {
    AppSpec {
        name: "echo".into(),
        command_template: "echo {{msg}}".into(),
        parameters: [("msg".to_string(), ParameterSpec { required: true, default: None })].into(),
        ..Default::default()
    }
}

fn draft(app: AppId, n: u32) -> JobDraft {
    JobDraft { app_id: app, workdir: format!("e/{n}"), parameters: [("msg".into(), n.to_string())].into(), ..Default::default() }
}

/// Alice's part of the store, as the service holds it.
fn alice_view(svc: &Service, alice_site: SiteId) -> String {
    let s = svc.snapshot();
    let jobs: Vec<_> = s.jobs.iter().filter(|j| j.site_id == alice_site).collect();
    let ids: BTreeSet<_> = jobs.iter().map(|j| j.job_id).collect();
    let events: Vec<_> = s.events.iter().filter(|e| ids.contains(&e.job_id)).collect();
    let sessions: Vec<_> = s.sessions.iter().filter(|x| x.site_id == alice_site).collect();
    let apps: Vec<_> = s.apps.iter().filter(|a| a.site_id == alice_site).collect();
    serde_json::to_string(&(jobs, events, sessions, apps)).unwrap()
}

fn refused<T>(r: Result<T, ApiError>, what: &Probe) -> Result<(), TestCaseError> {
    match r {
        Ok(_) => Err(TestCaseError::fail(format!("{what:?} was accepted"))),
        Err(e) if matches!(e.code, ErrorKind::ForeignSite | ErrorKind::Forbidden | ErrorKind::NotFound | ErrorKind::UnknownApp | ErrorKind::UnknownSession) => Ok(()),
        Err(e) => Err(TestCaseError::fail(format!("{what:?} failed oddly: {e:?}"))),
    }
}

fn isolation_case(probes: &[Probe]) -> Result<(), TestCaseError> {
    let clock = Arc::new(ManualClock::new(Timestamp(0)));
    let svc = Arc::new(Service::in_memory(StoreConfig::default(), clock));
    svc.register_user("alice", "a").unwrap();
    svc.register_user("bob", "b").unwrap();
    let server = spawn_server(svc.clone(), "127.0.0.1:0".parse().unwrap()).unwrap();
    let url = server.base_url();
    let (alice, _) = HttpApi::login(&url, "alice", "a").unwrap();
    let (bob, _) = HttpApi::login(&url, "bob", "b").unwrap();
    let a_site = alice.register_site(&RegisterSite { hostname: "h".into(), path: "/p".into() }).unwrap().site_id;
    let b_site = bob.register_site(&RegisterSite { hostname: "h".into(), path: "/p".into() }).unwrap().site_id;
    let a_app = alice.sync_apps(a_site, &[echo()]).unwrap()[0];
    bob.sync_apps(b_site, &[echo()]).unwrap();
    alice.create_jobs(&[draft(a_app, 0), draft(a_app, 1), draft(a_app, 2)]).unwrap();
    let sess = alice.create_session(&CreateSession { site_id: a_site, batchjob_id: None }).unwrap().session_id;
    let node = vec![NodeResource::new(0, 64, 0.0, 1)];
    alice.acquire(sess, &AcquireRequest::new(1, node.clone())).unwrap();
    let before = alice_view(&svc, a_site);

    for p in probes {
        match p {
            Probe::ListJobs => {
                let all = bob.query_jobs(&JobQuery::default()).unwrap();
                prop_assert!(all.iter().all(|j| j.site_id == b_site));
                let q = JobQuery { filter: JobFilter { site_id: Some(a_site), ..Default::default() }, ..Default::default() };
                prop_assert!(bob.query_jobs(&q).unwrap().is_empty());
            }
            Probe::Count => {
                let f = JobFilter { site_id: Some(a_site), ..Default::default() };
                prop_assert_eq!(bob.count_jobs(&f).unwrap(), 0);
            }
            Probe::Update(j, s) => {
                let out = bob.update_jobs(&[JobUpdate::transition(JobId(*j), *s)]).unwrap();
                prop_assert!(out.events.is_empty());
                prop_assert_eq!(out.errors.len(), 1);
            }
            Probe::CreateJob => refused(bob.create_jobs(&[draft(a_app, 9)]), p)?,
            Probe::SyncApps => refused(bob.sync_apps(a_site, &[echo()]), p)?,
            Probe::Backlog => refused(bob.backlog(a_site), p)?,
            Probe::Events => {
                prop_assert!(bob.events(&EventFilter::default()).unwrap().is_empty());
                let f = EventFilter { job_ids: vec![JobId(1), JobId(2)], ..Default::default() };
                prop_assert!(bob.events(&f).unwrap().is_empty());
            }
            Probe::Session => refused(bob.create_session(&CreateSession { site_id: a_site, batchjob_id: None }), p)?,
            Probe::Acquire(s) => refused(bob.acquire(SessionId(*s), &AcquireRequest::new(4, node.clone())), p)?,
            Probe::Heartbeat(s) => refused(bob.heartbeat(SessionId(*s)), p)?,
            Probe::EndSession(s) => refused(bob.delete_session(SessionId(*s)), p)?,
            Probe::Transfers => {
                refused(bob.list_transfers(&TransferFilter { site_id: a_site, state: None, direction: None }), p)?
            }
        }
    }
    let after = alice_view(&svc, a_site);
    server.stop().unwrap();
    prop_assert_eq!(after, before, "bob changed alice's state");
    Ok(())
}

fn api_conformance() -> Outcome {
    let exchanges = golden_replay()?;
    let cases = 24;
    let mut runner = TestRunner::new_with_rng(
        PropConfig { cases, failure_persistence: None, ..PropConfig::default() },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    );
    runner
        .run(&proptest::collection::vec(probe(), 1..10), |ps| isolation_case(&ps))
        .map_err(|e| format!("isolation: {e}"))?;
    Ok(format!(
        "{exchanges} golden exchanges replayed over HTTP, {} routes covered; isolation held in {cases} random cases",
        ROUTES.len()
    ))
}

// ----------------------------------------------------------------

fn main() {
    let mut logs = Logs::default();
    let criteria: Vec<(&str, Box<dyn FnOnce(&mut Logs) -> Outcome>)> = vec![
        ("state machine", Box::new(|_| state_machine())),
        ("lease exclusivity", Box::new(|_| lease_exclusivity())),
        ("stress replay", Box::new(stress_replay)),
        ("latency calibration", Box::new(|_| latency_calibration())),
        ("batching curve", Box::new(batching)),
        ("little's law", Box::new(littles_law)),
        ("multi-site aggregation", Box::new(multisite)),
        ("routing", Box::new(routing)),
        ("weak scaling", Box::new(weak_scaling)),
        ("determinism", Box::new(|l: &mut Logs| determinism(l))),
        ("api conformance", Box::new(|_| api_conformance())),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.into_iter().enumerate() {
        let t0 = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| f(&mut logs)))
            .unwrap_or_else(|p| Err(p.downcast_ref::<String>().cloned().unwrap_or_else(|| "panicked".into())));
        let (tag, detail) = match result {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {:>2} {tag} {name} [{:.1}s]: {detail}", i + 1, t0.elapsed().as_secs_f64());
    }
    println!("acceptance: {} of 11 criteria passed", 11 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
