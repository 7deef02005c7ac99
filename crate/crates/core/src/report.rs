//! Turns a record file into a directory of CSV series, per-client tables,
//! fit coefficients, gnuplot data and a text summary. Output is a pure
//! function of the input file and options.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use crate::analysis::{
    client_stats, detect_peak_window, load_series, moving_average, polyfit, response_series, saturation_estimate,
    throughput_series, AnalysisError, Bins, Diagnostics, FailureMark, FitModel, LatencyLegs, RecordFile, Saturation,
};
use crate::model::{ClientStats, MetricSeries, Outcome};

#[derive(Debug, Clone)]
pub struct AnalyzeOptions {
    /// Seconds.
    pub quantum_throughput: i64,
    pub quantum_load: i64,
    pub quantum_response: i64,
    pub ma_window: i64,
    pub poly_degree: usize,
    pub legs: LatencyLegs,
    /// Global ms; detected when absent.
    pub peak_window: Option<(i64, i64)>,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        AnalyzeOptions {
            quantum_throughput: 60,
            quantum_load: 1,
            quantum_response: 60,
            ma_window: 160,
            poly_degree: 6,
            legs: LatencyLegs::Both,
            peak_window: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BubbleRow {
    pub tester_id: u32,
    pub mean_load: f64,
    pub jobs: u64,
}

/// Per tester: mean aggregate load over its active window and its completed
/// jobs.
pub fn bubble_data(stats: &[ClientStats], load: &MetricSeries) -> Vec<BubbleRow> {
    stats
        .iter()
        .map(|s| {
            let (a, b) = s.active_window;
            let inside: Vec<f64> = load
                .points
                .iter()
                .filter(|p| p.start * 1000 >= a && p.start * 1000 < b)
                .map(|p| p.value)
                .collect();
            let mean_load = if inside.is_empty() {
                0.0
            } else {
                inside.iter().sum::<f64>() / inside.len() as f64
            };
            BubbleRow {
                tester_id: s.tester_id,
                mean_load,
                jobs: s.jobs_completed,
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ReportBundle {
    /// Global second that relative times count from.
    pub origin: i64,
    pub throughput: MetricSeries,
    pub load: MetricSeries,
    pub response: MetricSeries,
    pub throughput_ma: MetricSeries,
    pub response_ma: MetricSeries,
    pub fits: BTreeMap<&'static str, Result<FitModel, String>>,
    pub client_stats: Vec<ClientStats>,
    pub bubble: Vec<BubbleRow>,
    pub peak_window: Option<(i64, i64)>,
    pub saturation: Result<Saturation, String>,
    pub diagnostics: Diagnostics,
    pub outcomes: BTreeMap<&'static str, u64>,
    pub failures: Vec<FailureMark>,
    pub options: AnalyzeOptions,
}

pub fn build_report(file: &RecordFile, options: &AnalyzeOptions) -> Result<ReportBundle, AnalysisError> {
    let normalized = file.normalize(options.legs);
    let records = &normalized.records;
    let origin = Bins::covering(records, 1).origin;
    let throughput = throughput_series(records, Bins::new(origin, options.quantum_throughput));
    let load = load_series(records, Bins::new(origin, options.quantum_load));
    let response = response_series(records, Bins::new(origin, options.quantum_response));
    let throughput_ma = moving_average(&throughput, options.ma_window)?;
    let response_ma = moving_average(&response, options.ma_window)?;

    let mut fits = BTreeMap::new();
    fits.insert("moving_average", Ok(FitModel::MovingAverage { window: options.ma_window }));
    for (name, series) in [("throughput", &throughput), ("response", &response)] {
        let fit = polyfit(series, options.poly_degree)
            .map(FitModel::Polynomial)
            .map_err(|e| e.to_string());
        fits.insert(name, fit);
    }

    let peak_window = options.peak_window.or_else(|| detect_peak_window(records));
    let stats = client_stats(records, peak_window);
    let bubble = bubble_data(&stats, &load);
    let saturation = saturation_estimate(&throughput, &load).map_err(|e| e.to_string());

    let mut outcomes: BTreeMap<&'static str, u64> = Outcome::ALL.iter().map(|o| (o.token(), 0)).collect();
    for r in records {
        *outcomes.entry(r.outcome.token()).or_default() += 1;
    }
    Ok(ReportBundle {
        origin,
        throughput,
        load,
        response,
        throughput_ma,
        response_ma,
        fits,
        client_stats: stats,
        bubble,
        peak_window,
        saturation,
        diagnostics: normalized.diagnostics,
        outcomes,
        failures: file.failures.clone(),
        options: options.clone(),
    })
}

/// `time,value` with time in seconds since `origin`.
pub fn series_csv(series: &MetricSeries, origin: i64) -> String {
    let mut s = String::from("time,value\n");
    for p in &series.points {
        let _ = writeln!(s, "{},{}", p.start - origin, p.value);
    }
    s
}

fn ratio_text(num: u64, den: u64) -> String {
    if den == 0 {
        "0".into()
    } else {
        format!("{:.12}", num as f64 / den as f64)
    }
}

impl ReportBundle {
    pub fn client_stats_csv(&self) -> String {
        let mut s = String::from("tester_id,jobs,utilization,fairness\n");
        for c in &self.client_stats {
            let fairness = c.fairness.map(|f| f.to_string()).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{}",
                c.tester_id,
                c.jobs_completed,
                ratio_text(c.utilization.num, c.utilization.den),
                fairness
            );
        }
        s
    }

    pub fn bubble_csv(&self) -> String {
        let mut s = String::from("tester_id,mean_load,jobs\n");
        for b in &self.bubble {
            let _ = writeln!(s, "{},{},{}", b.tester_id, b.mean_load, b.jobs);
        }
        s
    }

    pub fn fit_text(&self) -> String {
        let mut s = String::new();
        for (name, fit) in &self.fits {
            let _ = writeln!(s, "[{name}]");
            match fit {
                Ok(model) => {
                    let _ = writeln!(s, "{}", model.to_string().trim_end());
                }
                Err(e) => {
                    let _ = writeln!(s, "error {e}");
                }
            }
        }
        s
    }

    /// Series as gnuplot data blocks, selected with `index`: throughput,
    /// throughput moving average, throughput polynomial, load, response,
    /// response moving average, response polynomial.
    pub fn figure_series(&self) -> String {
        let mut s = String::new();
        let mut block = |title: &str, series: &MetricSeries| {
            let _ = writeln!(s, "# {title}\n# time value");
            for p in &series.points {
                let _ = writeln!(s, "{} {}", p.start - self.origin, p.value);
            }
            s.push_str("\n\n");
        };
        let poly = |name: &str, series: &MetricSeries| match self.fits.get(name) {
            Some(Ok(FitModel::Polynomial(p))) => p.sampled(series.origin, series.quantum),
            _ => MetricSeries::empty(series.origin, series.quantum),
        };
        block("throughput", &self.throughput);
        block("throughput_ma", &self.throughput_ma);
        block("throughput_poly", &poly("throughput", &self.throughput));
        block("load", &self.load);
        block("response", &self.response);
        block("response_ma", &self.response_ma);
        block("response_poly", &poly("response", &self.response));
        s
    }

    /// Per-client columns for fairness, utilization and bubble plots.
    pub fn figure_clients(&self) -> String {
        let mut s = String::from("# tester_id jobs utilization fairness mean_load\n");
        for (c, b) in self.client_stats.iter().zip(&self.bubble) {
            let fairness = c.fairness.map(|f| f.to_string()).unwrap_or_else(|| "NaN".into());
            let _ = writeln!(
                s,
                "{} {} {} {} {}",
                c.tester_id,
                c.jobs_completed,
                ratio_text(c.utilization.num, c.utilization.den),
                fairness,
                b.mean_load
            );
        }
        s
    }

    pub fn summary_text(&self) -> String {
        let mut s = String::new();
        let total: u64 = self.outcomes.values().sum();
        let _ = writeln!(s, "records {total}");
        for (token, n) in &self.outcomes {
            let _ = writeln!(s, "outcome {token} {n}");
        }
        let _ = writeln!(s, "excluded_no_offset {}", self.diagnostics.excluded_no_offset);
        let _ = writeln!(s, "clamped_negative_response {}", self.diagnostics.clamped_negative);
        let _ = writeln!(s, "origin_s {}", self.origin);
        match self.peak_window {
            Some((a, b)) => {
                let _ = writeln!(s, "peak_window_ms {a} {b}");
            }
            None => {
                let _ = writeln!(s, "peak_window_ms none");
            }
        }
        let peak_load = self.load.values().fold(0.0, f64::max);
        let _ = writeln!(s, "peak_load {peak_load}");
        match &self.saturation {
            Ok(sat) => {
                let _ = writeln!(s, "saturation {sat}");
            }
            Err(e) => {
                let _ = writeln!(s, "saturation error {e}");
            }
        }
        let rts: Vec<f64> = self.response.values().collect();
        if !rts.is_empty() {
            let _ = writeln!(s, "mean_response_ms_per_quantum {}", rts.iter().sum::<f64>() / rts.len() as f64);
        }
        for f in &self.failures {
            let _ = writeln!(s, "failure {f}");
        }
        s
    }

    pub fn write_to(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        let files = [
            ("throughput.csv", series_csv(&self.throughput, self.origin)),
            ("load.csv", series_csv(&self.load, self.origin)),
            ("response.csv", series_csv(&self.response, self.origin)),
            ("throughput_ma.csv", series_csv(&self.throughput_ma, self.origin)),
            ("response_ma.csv", series_csv(&self.response_ma, self.origin)),
            ("client_stats.csv", self.client_stats_csv()),
            ("bubble.csv", self.bubble_csv()),
            ("fit.txt", self.fit_text()),
            ("figure_series.dat", self.figure_series()),
            ("figure_clients.dat", self.figure_clients()),
            ("summary.txt", self.summary_text()),
        ];
        for (name, body) in files {
            fs::write(dir.join(name), body)?;
        }
        Ok(())
    }
}
