use std::collections::BTreeMap;
use std::fmt;

use crate::model::MetricSeries;

use super::AnalysisError;

/// Throughput gain per added unit of load, relative to the throughput at
/// the candidate knee, below which the curve counts as flat.
pub const KNEE_GAIN_PER_UNIT: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Saturation {
    /// Load level at which throughput stops growing.
    Capacity(f64),
    /// Throughput kept growing up to the highest observed load.
    Unsaturated,
}

impl fmt::Display for Saturation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Saturation::Capacity(c) => write!(f, "{c}"),
            Saturation::Unsaturated => f.write_str("unsaturated"),
        }
    }
}

/// The (load, throughput) curve: each throughput quantum is paired with the
/// mean load sampled inside it, rounded to a whole load level, and
/// throughput is averaged per level. Level 0 is dropped.
pub fn saturation_curve(
    throughput: &MetricSeries,
    load: &MetricSeries,
) -> Result<Vec<(i64, f64)>, AnalysisError> {
    let mut by_level: BTreeMap<i64, (f64, u64)> = BTreeMap::new();
    for q in &throughput.points {
        let lo = load.points.partition_point(|p| p.start < q.start);
        let hi = load.points.partition_point(|p| p.start < q.start + throughput.quantum);
        let inside = &load.points[lo..hi];
        if inside.is_empty() {
            continue;
        }
        let mean = inside.iter().map(|p| p.value).sum::<f64>() / inside.len() as f64;
        let level = mean.round() as i64;
        if level <= 0 {
            continue;
        }
        let e = by_level.entry(level).or_insert((0.0, 0));
        e.0 += q.value;
        e.1 += 1;
    }
    if by_level.is_empty() {
        return Err(AnalysisError::NoOverlap);
    }
    Ok(by_level
        .into_iter()
        .map(|(level, (sum, n))| (level, sum / n as f64))
        .collect())
}

/// Smallest load level past which throughput gains less than
/// [`KNEE_GAIN_PER_UNIT`] relative to its own value per added unit of load.
///
/// Higher levels are compared through the mean of the curve from that level
/// up, which smooths the count jitter of levels seen in only a few quanta.
pub fn saturation_estimate(
    throughput: &MetricSeries,
    load: &MetricSeries,
) -> Result<Saturation, AnalysisError> {
    let curve = saturation_curve(throughput, load)?;
    let n = curve.len();
    if n == 1 {
        return Ok(Saturation::Capacity(curve[0].0 as f64));
    }
    let mut tail = vec![0.0; n];
    let mut acc = 0.0;
    for i in (0..n).rev() {
        acc += curve[i].1;
        tail[i] = acc / (n - i) as f64;
    }
    let flat_after = |i: usize| {
        let (l0, f0) = curve[i];
        (i + 1..n).all(|j| {
            let gain = tail[j] - f0;
            if f0 > 0.0 {
                gain / f0 < KNEE_GAIN_PER_UNIT * (curve[j].0 - l0) as f64
            } else {
                gain <= 0.0
            }
        })
    };
    let knee = (0..n).find(|&i| flat_after(i)).expect("last level is always flat");
    if knee == n - 1 {
        Ok(Saturation::Unsaturated)
    } else {
        Ok(Saturation::Capacity(curve[knee].0 as f64))
    }
}
