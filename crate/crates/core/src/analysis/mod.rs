//! Offline analysis: map records to global time, compute response time,
//! throughput, offered load, utilization and fairness, and fit trends.

mod fit;
mod metrics;
mod records;
mod saturation;

pub use fit::{moving_average, polyfit, FitModel, PolyFit};
pub use metrics::{client_stats, detect_peak_window, load_series, response_series, throughput_series, Bins};
pub use records::{FailureMark, RecordFile};
pub use saturation::{saturation_curve, saturation_estimate, Saturation, KNEE_GAIN_PER_UNIT};

use std::collections::BTreeMap;

use thiserror::Error;

use crate::model::{ClockOffset, InvocationRecord, Outcome};
use crate::timesync::{select_offset, to_global};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("polynomial of degree {degree} needs more than {degree} points, got {points}")]
    TooFewPoints { degree: usize, points: usize },
    #[error("least-squares solve failed: {0}")]
    Solve(String),
    #[error("series do not overlap in time")]
    NoOverlap,
    #[error("window must be > 0")]
    BadWindow,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How much network latency to take off a measured duration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LatencyLegs {
    /// Request and reply legs: twice the one-way estimate.
    #[default]
    Both,
    One,
}

impl LatencyLegs {
    fn factor(self) -> i64 {
        match self {
            LatencyLegs::Both => 2,
            LatencyLegs::One => 1,
        }
    }
}

/// A record mapped to global time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlobalRecord {
    pub tester_id: u32,
    pub sequence: u64,
    pub start_global: i64,
    pub end_global: i64,
    pub outcome: Outcome,
    /// Success records only.
    pub response_time: Option<i64>,
}

impl GlobalRecord {
    pub fn is_success(&self) -> bool {
        self.outcome.is_success()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Diagnostics {
    /// Records with no offset measured before their start.
    pub excluded_no_offset: u64,
    /// Response times that went negative after subtraction and were clamped.
    pub clamped_negative: u64,
}

#[derive(Debug, Clone, Default)]
pub struct Normalized {
    pub records: Vec<GlobalRecord>,
    pub diagnostics: Diagnostics,
}

/// Maps records to global time with the latest offset measured at or before
/// each record's start, sorted by global start.
pub fn normalize(
    records: &[InvocationRecord],
    offsets: &BTreeMap<u32, Vec<ClockOffset>>,
    legs: LatencyLegs,
) -> Normalized {
    let mut out = Normalized::default();
    for r in records {
        let Some(off) = offsets
            .get(&r.tester_id)
            .and_then(|h| select_offset(h, r.start_local))
        else {
            out.diagnostics.excluded_no_offset += 1;
            continue;
        };
        let response_time = r.outcome.is_success().then(|| {
            let rt = r.duration_ms()
                - legs.factor() * r.latency_estimate.unwrap_or(0)
                - r.client_overhead.unwrap_or(0);
            if rt < 0 {
                out.diagnostics.clamped_negative += 1;
            }
            rt.max(0)
        });
        out.records.push(GlobalRecord {
            tester_id: r.tester_id,
            sequence: r.sequence,
            start_global: to_global(r.start_local, off),
            end_global: to_global(r.end_local, off),
            outcome: r.outcome,
            response_time,
        });
    }
    out.records
        .sort_by_key(|g| (g.start_global, g.tester_id, g.sequence));
    out
}
