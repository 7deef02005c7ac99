use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::model::{MetricSeries, SeriesPoint};

use super::AnalysisError;

/// A least-squares polynomial over a series.
///
/// Time is normalized to `u = (t - t_start) / (t_end - t_start)` before
/// fitting so high degrees stay well conditioned. `coefficients[k]`
/// multiplies `u^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyFit {
    pub degree: usize,
    pub coefficients: Vec<f64>,
    pub t_start: i64,
    pub t_end: i64,
    pub rms_residual: f64,
}

impl PolyFit {
    pub fn normalize(&self, t: f64) -> f64 {
        let span = (self.t_end - self.t_start) as f64;
        if span > 0.0 {
            (t - self.t_start as f64) / span
        } else {
            0.0
        }
    }

    pub fn evaluate_normalized(&self, u: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, c| acc * u + c)
    }

    pub fn evaluate(&self, t: f64) -> f64 {
        self.evaluate_normalized(self.normalize(t))
    }

    /// The fit sampled at each quantum from `t_start` to `t_end`.
    pub fn sampled(&self, origin: i64, quantum: i64) -> MetricSeries {
        let points = (self.t_start..=self.t_end)
            .step_by(quantum as usize)
            .map(|t| SeriesPoint {
                start: t,
                value: self.evaluate(t as f64),
            })
            .collect();
        MetricSeries::new(origin, quantum, points).unwrap_or_else(|_| MetricSeries::empty(origin, quantum))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FitModel {
    /// Trailing mean over `(t - window, t]`, in seconds.
    MovingAverage { window: i64 },
    Polynomial(PolyFit),
}

impl fmt::Display for FitModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FitModel::MovingAverage { window } => write!(f, "moving_average window={window}s"),
            FitModel::Polynomial(p) => {
                writeln!(
                    f,
                    "polynomial degree={} t_start={} t_end={} rms_residual={:.12e}",
                    p.degree, p.t_start, p.t_end, p.rms_residual
                )?;
                for (k, c) in p.coefficients.iter().enumerate() {
                    writeln!(f, "c{k} {c:.12e}")?;
                }
                Ok(())
            }
        }
    }
}

/// Trailing moving average: each output point is the mean of the input
/// points in `(t - window, t]`.
pub fn moving_average(series: &MetricSeries, window: i64) -> Result<MetricSeries, AnalysisError> {
    if window <= 0 {
        return Err(AnalysisError::BadWindow);
    }
    let pts = &series.points;
    let mut lo = 0;
    let mut out = Vec::with_capacity(pts.len());
    for (hi, p) in pts.iter().enumerate() {
        while pts[lo].start <= p.start - window {
            lo += 1;
        }
        // incremental mean: exact on constant input, unlike sum / n
        let mean = pts[lo..=hi]
            .iter()
            .enumerate()
            .fold(0.0, |m, (k, q)| m + (q.value - m) / (k + 1) as f64);
        out.push(SeriesPoint {
            start: p.start,
            value: mean,
        });
    }
    Ok(MetricSeries::new(series.origin, series.quantum, out).expect("same timestamps as input"))
}

pub fn polyfit(series: &MetricSeries, degree: usize) -> Result<PolyFit, AnalysisError> {
    let n = series.len();
    if n <= degree {
        return Err(AnalysisError::TooFewPoints { degree, points: n });
    }
    let t_start = series.points[0].start;
    let t_end = series.points[n - 1].start;
    let mut fit = PolyFit {
        degree,
        coefficients: Vec::new(),
        t_start,
        t_end,
        rms_residual: 0.0,
    };
    let us: Vec<f64> = series.points.iter().map(|p| fit.normalize(p.start as f64)).collect();
    let a = DMatrix::from_fn(n, degree + 1, |i, k| us[i].powi(k as i32));
    let b = DVector::from_iterator(n, series.values());
    let x = a
        .svd(true, true)
        .solve(&b, 1e-12)
        .map_err(|e| AnalysisError::Solve(e.to_string()))?;
    fit.coefficients = x.iter().copied().collect();
    let sq: f64 = us
        .iter()
        .zip(series.values())
        .map(|(&u, y)| (fit.evaluate_normalized(u) - y).powi(2))
        .sum();
    fit.rms_residual = (sq / n as f64).sqrt();
    Ok(fit)
}
