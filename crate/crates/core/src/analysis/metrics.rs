use std::collections::BTreeMap;

use crate::model::{ClientStats, MetricSeries, Ratio, SeriesPoint};

use super::GlobalRecord;

/// Time quantization: quantum `k` covers global seconds
/// `[origin + k*quantum, origin + (k+1)*quantum)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bins {
    pub origin: i64,
    pub quantum: i64,
}

impl Bins {
    pub fn new(origin: i64, quantum: i64) -> Self {
        assert!(quantum > 0, "quantum must be positive");
        Bins { origin, quantum }
    }

    /// Origin at the whole second of the earliest start.
    pub fn covering(records: &[GlobalRecord], quantum: i64) -> Self {
        let origin = records
            .iter()
            .map(|r| r.start_global.div_euclid(1000))
            .min()
            .unwrap_or(0);
        Bins::new(origin, quantum)
    }

    fn quantum_ms(&self) -> i64 {
        self.quantum * 1000
    }

    fn origin_ms(&self) -> i64 {
        self.origin * 1000
    }

    pub fn index(&self, ms: i64) -> i64 {
        (ms - self.origin_ms()).div_euclid(self.quantum_ms())
    }

    pub fn start(&self, k: i64) -> i64 {
        self.origin + k * self.quantum
    }

    /// Index of the first sample instant at or after `ms`.
    fn ceil_index(&self, ms: i64) -> i64 {
        -(self.origin_ms() - ms).div_euclid(self.quantum_ms())
    }

    fn series(&self, points: Vec<SeriesPoint>) -> MetricSeries {
        MetricSeries::new(self.origin, self.quantum, points).expect("bins produce aligned points")
    }
}

fn dense_counts(bins: &Bins, counts: BTreeMap<i64, u64>) -> MetricSeries {
    let (Some(&lo), Some(&hi)) = (counts.keys().next(), counts.keys().next_back()) else {
        return bins.series(Vec::new());
    };
    let points = (lo..=hi)
        .map(|k| SeriesPoint {
            start: bins.start(k),
            value: counts.get(&k).copied().unwrap_or(0) as f64,
        })
        .collect();
    bins.series(points)
}

/// Successful completions per quantum, by end time. Quanta between the
/// first and last completion are present with zero.
pub fn throughput_series(records: &[GlobalRecord], bins: Bins) -> MetricSeries {
    let mut counts = BTreeMap::new();
    for r in records.iter().filter(|r| r.is_success()) {
        *counts.entry(bins.index(r.end_global)).or_insert(0u64) += 1;
    }
    dense_counts(&bins, counts)
}

/// Requests in flight at each quantum start: records with
/// `start <= t < end`, any outcome.
pub fn load_series(records: &[GlobalRecord], bins: Bins) -> MetricSeries {
    let spans: Vec<(i64, i64)> = records
        .iter()
        .map(|r| (bins.ceil_index(r.start_global), bins.ceil_index(r.end_global)))
        .filter(|(lo, hi)| lo < hi)
        .collect();
    let (Some(lo), Some(hi)) = (
        spans.iter().map(|s| s.0).min(),
        spans.iter().map(|s| s.1).max(),
    ) else {
        return bins.series(Vec::new());
    };
    let mut diff = vec![0i64; (hi - lo + 1) as usize];
    for (a, b) in spans {
        diff[(a - lo) as usize] += 1;
        diff[(b - lo) as usize] -= 1;
    }
    let mut level = 0;
    let points = (lo..hi)
        .map(|k| {
            level += diff[(k - lo) as usize];
            SeriesPoint {
                start: bins.start(k),
                value: level as f64,
            }
        })
        .collect();
    bins.series(points)
}

/// Mean response time of successes completing in each quantum. Quanta
/// without completions are omitted.
pub fn response_series(records: &[GlobalRecord], bins: Bins) -> MetricSeries {
    let mut acc: BTreeMap<i64, (i64, u64)> = BTreeMap::new();
    for r in records {
        if let (true, Some(rt)) = (r.is_success(), r.response_time) {
            let e = acc.entry(bins.index(r.end_global)).or_insert((0, 0));
            e.0 += rt;
            e.1 += 1;
        }
    }
    let points = acc
        .into_iter()
        .map(|(k, (sum, n))| SeriesPoint {
            start: bins.start(k),
            value: sum as f64 / n as f64,
        })
        .collect();
    bins.series(points)
}

/// Each tester's active window: first start to last end, inclusive.
fn active_windows(records: &[GlobalRecord]) -> BTreeMap<u32, (i64, i64)> {
    let mut windows: BTreeMap<u32, (i64, i64)> = BTreeMap::new();
    for r in records {
        windows
            .entry(r.tester_id)
            .and_modify(|w| {
                w.0 = w.0.min(r.start_global);
                w.1 = w.1.max(r.end_global);
            })
            .or_insert((r.start_global, r.end_global));
    }
    windows
}

/// The longest contiguous interval where the number of active testers is
/// at its maximum. Ties go to the earliest.
pub fn detect_peak_window(records: &[GlobalRecord]) -> Option<(i64, i64)> {
    let windows = active_windows(records);
    // closed windows: at equal times, starts count before ends
    let mut events: Vec<(i64, i32)> = windows
        .values()
        .flat_map(|&(a, b)| [(a, 0), (b, 1)])
        .collect();
    events.sort_unstable();
    let mut level = 0;
    let mut max = 0;
    for &(_, kind) in &events {
        level += if kind == 0 { 1 } else { -1 };
        max = max.max(level);
    }
    let mut best: Option<(i64, i64)> = None;
    let mut opened = None;
    level = 0;
    for &(t, kind) in &events {
        if kind == 0 {
            level += 1;
            if level == max {
                opened = Some(t);
            }
        } else {
            if level == max {
                if let Some(a) = opened.take() {
                    if best.is_none_or(|(x, y)| t - a > y - x) {
                        best = Some((a, t));
                    }
                }
            }
            level -= 1;
        }
    }
    best
}

/// Per-tester jobs, utilization and fairness over the peak window.
///
/// For tester `i` the window is its active window intersected with the peak
/// window. `jobs` counts its successes ending there, utilization is `jobs`
/// over all testers' successes ending in the same window, and fairness is
/// `jobs / utilization`, i.e. that total.
pub fn client_stats(records: &[GlobalRecord], peak_window: Option<(i64, i64)>) -> Vec<ClientStats> {
    let Some((p0, p1)) = peak_window.or_else(|| detect_peak_window(records)) else {
        return Vec::new();
    };
    let mut success_ends: Vec<(i64, u32)> = records
        .iter()
        .filter(|r| r.is_success())
        .map(|r| (r.end_global, r.tester_id))
        .collect();
    success_ends.sort_unstable();
    let in_range = |a: i64, b: i64| {
        let lo = success_ends.partition_point(|&(t, _)| t < a);
        let hi = success_ends.partition_point(|&(t, _)| t <= b);
        &success_ends[lo..hi]
    };
    active_windows(records)
        .into_iter()
        .map(|(tester_id, (a, b))| {
            let (w0, w1) = (a.max(p0), b.min(p1));
            let (jobs, total) = if w0 <= w1 {
                let slice = in_range(w0, w1);
                (
                    slice.iter().filter(|&&(_, id)| id == tester_id).count() as u64,
                    slice.len() as u64,
                )
            } else {
                (0, 0)
            };
            ClientStats {
                tester_id,
                jobs_completed: jobs,
                active_window: (a, b),
                utilization: Ratio::new(jobs, total),
                fairness: (jobs > 0).then_some(total),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Outcome;

    fn rec(tester_id: u32, start: i64, end: i64, rt: i64) -> GlobalRecord {
        GlobalRecord {
            tester_id,
            sequence: 0,
            start_global: start,
            end_global: end,
            outcome: Outcome::Success,
            response_time: Some(rt),
        }
    }

    #[test]
    fn empty_inputs() {
        let bins = Bins::new(0, 60);
        assert!(throughput_series(&[], bins).is_empty());
        assert!(load_series(&[], bins).is_empty());
        assert!(response_series(&[], bins).is_empty());
        assert!(client_stats(&[], None).is_empty());
        assert_eq!(detect_peak_window(&[]), None);
    }

    #[test]
    fn uniform_completions_give_constant_throughput() {
        // two completions per second for ten minutes
        let records: Vec<_> = (0..1200).map(|i| rec(1, i * 500, i * 500 + 499, 1)).collect();
        let s = throughput_series(&records, Bins::new(0, 60));
        let values: Vec<f64> = s.values().collect();
        assert_eq!(values, [120.0; 10]);
        assert_eq!(s.sum(), 1200.0);
    }

    #[test]
    fn single_record_load() {
        let s = load_series(&[rec(1, 10_000, 13_000, 0)], Bins::new(0, 1));
        let pts: Vec<(i64, f64)> = s.points.iter().map(|p| (p.start, p.value)).collect();
        assert_eq!(pts, vec![(10, 1.0), (11, 1.0), (12, 1.0)]);
    }

    #[test]
    fn load_includes_idle_gaps() {
        let s = load_series(&[rec(1, 1000, 2000, 0), rec(1, 4000, 5500, 0)], Bins::new(0, 1));
        let values: Vec<f64> = s.values().collect();
        assert_eq!(values, vec![1.0, 0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn response_means() {
        let s = response_series(&[rec(1, 0, 1000, 600), rec(2, 0, 2000, 800)], Bins::new(0, 60));
        assert_eq!(s.points, vec![SeriesPoint { start: 0, value: 700.0 }]);
        let one = response_series(&[rec(1, 0, 1000, 700)], Bins::new(0, 60));
        assert_eq!(one.points[0].value, 700.0);
    }

    #[test]
    fn sole_client_owns_everything() {
        let records: Vec<_> = (0..10).map(|i| rec(1, i * 1000, i * 1000 + 700, 700)).collect();
        let stats = client_stats(&records, None);
        assert_eq!(stats.len(), 1);
        assert_eq!(stats[0].jobs_completed, 10);
        assert_eq!(stats[0].utilization.value(), 1.0);
        assert_eq!(stats[0].fairness, Some(10));
    }

    #[test]
    fn two_symmetric_clients() {
        let mut records = Vec::new();
        for i in 0..5 {
            records.push(rec(1, i * 1000, i * 1000 + 900, 1));
            records.push(rec(2, i * 1000 + 10, i * 1000 + 900, 1));
        }
        let stats = client_stats(&records, Some((0, 10_000)));
        for s in &stats {
            assert_eq!(s.jobs_completed, 5);
            assert_eq!(s.utilization.value(), 0.5);
            assert_eq!(s.fairness, Some(10));
        }
    }

    #[test]
    fn idle_client_has_no_fairness() {
        let mut failed = rec(2, 0, 5000, 0);
        failed.outcome = Outcome::Timeout;
        failed.response_time = None;
        let stats = client_stats(&[rec(1, 0, 5000, 1), failed], None);
        assert_eq!(stats[1].jobs_completed, 0);
        assert_eq!(stats[1].utilization.value(), 0.0);
        assert_eq!(stats[1].fairness, None);
    }

    #[test]
    fn peak_window_is_full_overlap() {
        // triangular ramp: three testers staggered by 10 s, 30 s each
        let records = vec![
            rec(1, 0, 30_000, 0),
            rec(2, 10_000, 40_000, 0),
            rec(3, 20_000, 50_000, 0),
        ];
        assert_eq!(detect_peak_window(&records), Some((20_000, 30_000)));
    }

    #[test]
    fn peak_window_prefers_longest_plateau() {
        let records = vec![
            rec(1, 0, 100, 0),
            rec(2, 50, 60, 0),
            rec(3, 70, 95, 0),
        ];
        assert_eq!(detect_peak_window(&records), Some((70, 95)));
    }
}
