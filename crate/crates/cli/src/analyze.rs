use std::io::BufRead;
use std::path::PathBuf;

use clap::Args;
use conduit_core::metrics::{
    latency_decomposition, littles_law_check, series_csv, throughput_timeline, trimmed_window, utilization_timeline,
    LittleReport, SeriesPoint, StageSummary, Window,
};
use conduit_core::{EventRecord, ExecMode, JobState};
use serde::Serialize;

use crate::error::{CliError, CliResult};

#[derive(Args)]
pub struct ReportArgs {
    /// Event log as JSON lines.
    #[arg(long = "in", default_value = "events.jsonl")]
    input: PathBuf,
    #[arg(long, default_value = "metrics.json")]
    out: PathBuf,
    /// Also write throughput (and utilization, with --nodes) CSV here.
    #[arg(long)]
    csv_dir: Option<PathBuf>,
    /// Sampling step of the throughput series, in seconds.
    #[arg(long, default_value_t = 60.0)]
    step: f64,
    /// Provisioned task slots, for a utilization figure.
    #[arg(long)]
    nodes: Option<f64>,
    /// Fraction of the log's span cut from each end before the steady-state
    /// figures (Little's law, utilization) are taken.
    #[arg(long, default_value_t = 0.1)]
    trim: f64,
}

#[derive(Serialize)]
pub struct Report {
    pub events: usize,
    pub jobs_finished: usize,
    pub latency: StageSummary,
    pub latency_incomplete: usize,
    pub throughput_per_min: f64,
    pub little: Option<LittleReport>,
    pub utilization: Option<f64>,
}

pub fn read_jsonl(path: &PathBuf) -> CliResult<Vec<EventRecord>> {
    let f = std::fs::File::open(path).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?;
    let mut events = Vec::new();
    for (n, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e = serde_json::from_str(&line).map_err(|e| CliError::invalid(format!("{}:{}: {e}", path.display(), n + 1)))?;
        events.push(e);
    }
    Ok(events)
}

pub fn analyze(events: &[EventRecord], step: f64, nodes: Option<f64>, trim: f64) -> (Report, Vec<SeriesPoint>, Option<Vec<SeriesPoint>>) {
    let latency = latency_decomposition(events, ExecMode::default());
    let span = Window::spanning(events);
    let finished = events.iter().filter(|e| e.to_state == JobState::Finished).count();
    let throughput_per_min = match span {
        Some(w) if w.duration_secs() > 0.0 => finished as f64 * 60.0 / w.duration_secs(),
        _ => 0.0,
    };
    let steady = span.map(|w| trimmed_window(w, trim));
    let little = steady.and_then(|w| littles_law_check(events, w).ok());
    let util = match (steady, nodes) {
        (Some(w), Some(n)) => {
            let start = span.map(|s| s.start).unwrap_or(w.start);
            Some(utilization_timeline(events, &[(start, n)], w))
        }
        _ => None,
    };
    let util_series = util.as_ref().map(|u| {
        u.timestamps
            .iter()
            .zip(&u.running_count)
            .zip(&u.provisioned)
            .map(|((&t, &r), &p)| SeriesPoint { t_seconds: t, value: if p > 0.0 { r as f64 / p } else { 0.0 } })
            .collect()
    });
    let tput = span.map(|w| throughput_timeline(events, JobState::Finished, w, step)).unwrap_or_default();
    let report = Report {
        events: events.len(),
        jobs_finished: finished,
        latency: latency.summary,
        latency_incomplete: latency.incomplete,
        throughput_per_min,
        little,
        utilization: util.map(|u| u.time_average),
    };
    (report, tput, util_series)
}

pub fn report(a: ReportArgs) -> CliResult {
    if a.step <= 0.0 || !(0.0..0.5).contains(&a.trim) || a.nodes.is_some_and(|n| n <= 0.0) {
        return Err(CliError::invalid("--step and --nodes must be positive and --trim in [0, 0.5)"));
    }
    let events = read_jsonl(&a.input)?;
    let (rep, tput, util) = analyze(&events, a.step, a.nodes, a.trim);
    std::fs::write(&a.out, serde_json::to_string_pretty(&rep)?)?;
    if let Some(dir) = &a.csv_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("throughput.csv"), series_csv(&tput))?;
        if let Some(u) = &util {
            std::fs::write(dir.join("utilization.csv"), series_csv(u))?;
        }
    }
    let l = &rep.latency;
    println!("events {}  finished {}  incomplete {}", rep.events, rep.jobs_finished, rep.latency_incomplete);
    println!(
        "mean seconds: stage_in {:.2}  run_delay {:.2}  run {:.2}  stage_out {:.2}  overhead {:.2}  time_to_solution {:.2}",
        l.stage_in.mean, l.run_delay.mean, l.run.mean, l.stage_out.mean, l.overhead.mean, l.time_to_solution.mean
    );
    println!("throughput {:.2} jobs/min", rep.throughput_per_min);
    if let Some(li) = &rep.little {
        println!("little: lambda {:.4}/s  W {:.2}s  L expected {:.2}  observed {:.2}  gap {:.3}", li.lambda, li.w, li.l_expected, li.l_observed, li.relative_gap);
    }
    if let Some(u) = rep.utilization {
        println!("utilization {u:.3}");
    }
    Ok(())
}
