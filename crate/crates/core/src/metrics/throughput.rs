use super::{SeriesPoint, Window};
use crate::job::EventRecord;
use crate::state::JobState;
use crate::time::Timestamp;

/// Number of transitions into `to_state` inside `window`.
pub fn count_transitions(events: &[EventRecord], to_state: JobState, window: Window) -> usize {
    events
        .iter()
        .filter(|e| e.to_state == to_state && window.contains(e.timestamp))
        .count()
}

/// Cumulative count of transitions into `to_state`, sampled every `step_secs`
/// from `window.start` through `window.end` inclusive. Times are seconds from
/// `window.start`.
pub fn throughput_timeline(events: &[EventRecord], to_state: JobState, window: Window, step_secs: f64) -> Vec<SeriesPoint> {
    assert!(step_secs > 0.0, "step must be positive");
    let mut times: Vec<Timestamp> = events.iter().filter(|e| e.to_state == to_state).map(|e| e.timestamp).collect();
    times.sort_unstable();
    let steps = (window.duration_secs() / step_secs).floor().max(0.0) as usize;
    let mut out = Vec::with_capacity(steps + 2);
    let mut idx = 0;
    let mut push = |t: Timestamp, out: &mut Vec<SeriesPoint>| {
        while idx < times.len() && times[idx] <= t {
            idx += 1;
        }
        out.push(SeriesPoint { t_seconds: t.secs_since(window.start), value: idx as f64 });
    };
    for k in 0..=steps {
        push(window.start.plus_secs(k as f64 * step_secs), &mut out);
    }
    if out.last().is_none_or(|p| p.t_seconds < window.duration_secs()) {
        push(window.end, &mut out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::testlog::log;
    use super::*;
    use JobState::*;

    #[test]
    fn empty_log_gives_zero_series() {
        let w = Window::new(Timestamp::ZERO, Timestamp::from_secs_f64(10.0));
        let s = throughput_timeline(&[], Finished, w, 5.0);
        assert_eq!(s.len(), 3);
        assert!(s.iter().all(|p| p.value == 0.0));
    }

    #[test]
    fn final_value_counts_all_transitions_and_is_monotone() {
        let ev = log(&[
            (1, Ready, 0.0),
            (1, StagedIn, 1.0),
            (2, Ready, 1.5),
            (2, StagedIn, 4.0),
            (3, Ready, 7.0),
            (3, StagedIn, 9.5),
        ]);
        let w = Window::spanning(&ev).unwrap();
        let s = throughput_timeline(&ev, StagedIn, w, 2.0);
        assert_eq!(s.last().unwrap().value, 3.0);
        assert!(s.windows(2).all(|p| p[0].value <= p[1].value));
        assert_eq!(s[1].value, 1.0);
    }

    /// Aggregate versus single-site completions over the same 19-minute run.
    #[test]
    fn aggregate_over_single_ratio() {
        let spread = |n: u64, offset: u64| -> Vec<(u64, JobState, f64)> {
            (0..n).map(|j| (offset + j, Finished, j as f64 * 1140.0 / n as f64)).collect()
        };
        let w = Window::new(Timestamp::ZERO, Timestamp::from_secs_f64(19.0 * 60.0));
        let aggregate = count_transitions(&log(&spread(1049, 0)), Finished, w);
        let single = count_transitions(&log(&spread(240, 10_000)), Finished, w);
        assert_eq!((aggregate, single), (1049, 240));
        assert!((aggregate as f64 / single as f64 - 4.37).abs() < 0.005);
    }
}
