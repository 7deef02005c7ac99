//! Shared domain vocabulary: test plans, invocation records, clock offsets,
//! metric series and per-client statistics.
//!
//! Timestamps are integer milliseconds. Series quanta are integer seconds.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid {field}: {reason}")]
    InvalidField { field: &'static str, reason: String },
    #[error("malformed record line: {0}")]
    MalformedRecord(String),
    #[error("unknown outcome token `{0}`")]
    UnknownOutcome(String),
    #[error("invalid series: {0}")]
    InvalidSeries(String),
}

/// The controller-to-tester contract. Durations are in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestDescription {
    pub experiment_duration: f64,
    /// Minimum gap between consecutive client starts on one tester.
    pub invocation_interval: f64,
    /// Clock resynchronization period.
    pub sync_interval: f64,
    /// Command line run once per invocation. `{target}` is replaced by
    /// `target_address`.
    pub client_command: String,
    pub target_address: String,
    pub timeserver_address: String,
    pub client_timeout: f64,
    /// Optional cap on invocations per second per tester.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_invocation_rate: Option<f64>,
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ModelError {
    ModelError::InvalidField {
        field,
        reason: reason.into(),
    }
}

impl TestDescription {
    /// Returns the description unchanged when every invariant holds, else an
    /// error naming the first violated field.
    pub fn validate(self) -> Result<Self, ModelError> {
        let positive = |field, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(invalid(field, format!("must be > 0, got {v}")))
            }
        };
        positive("experiment_duration", self.experiment_duration)?;
        if !(self.invocation_interval.is_finite() && self.invocation_interval >= 0.0) {
            return Err(invalid(
                "invocation_interval",
                format!("must be >= 0, got {}", self.invocation_interval),
            ));
        }
        positive("sync_interval", self.sync_interval)?;
        if self.client_command.trim().is_empty() {
            return Err(invalid("client_command", "must not be empty"));
        }
        if self.target_address.trim().is_empty() {
            return Err(invalid("target_address", "must not be empty"));
        }
        if self.timeserver_address.trim().is_empty() {
            return Err(invalid("timeserver_address", "must not be empty"));
        }
        positive("client_timeout", self.client_timeout)?;
        if let Some(rate) = self.max_invocation_rate {
            positive("max_invocation_rate", rate)?;
        }
        Ok(self)
    }

    pub fn duration_ms(&self) -> i64 {
        secs_to_ms(self.experiment_duration)
    }

    pub fn interval_ms(&self) -> i64 {
        secs_to_ms(self.invocation_interval)
    }

    pub fn sync_interval_ms(&self) -> i64 {
        secs_to_ms(self.sync_interval)
    }

    pub fn timeout_ms(&self) -> i64 {
        secs_to_ms(self.client_timeout)
    }
}

pub(crate) fn secs_to_ms(secs: f64) -> i64 {
    (secs * 1000.0).round() as i64
}

/// Classification of one client invocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Outcome {
    Success,
    /// Killed by the tester after the client timeout.
    Timeout,
    /// The client process could not be spawned.
    StartFailure,
    /// The client exited with a nonzero status.
    ServiceError,
}

impl Outcome {
    pub const ALL: [Outcome; 4] = [
        Outcome::Success,
        Outcome::Timeout,
        Outcome::StartFailure,
        Outcome::ServiceError,
    ];

    pub fn token(self) -> &'static str {
        match self {
            Outcome::Success => "OK",
            Outcome::Timeout => "TIMEOUT",
            Outcome::StartFailure => "STARTFAIL",
            Outcome::ServiceError => "SVCERR",
        }
    }

    pub fn is_success(self) -> bool {
        self == Outcome::Success
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Outcome {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Outcome::ALL
            .into_iter()
            .find(|o| o.token() == s)
            .ok_or_else(|| ModelError::UnknownOutcome(s.to_string()))
    }
}

/// One timed client invocation, timestamps on the tester clock.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvocationRecord {
    /// 1-based, assigned by launch order.
    pub tester_id: u32,
    pub sequence: u64,
    pub start_local: i64,
    pub end_local: i64,
    pub outcome: Outcome,
    /// Latest one-way latency estimate toward the target.
    pub latency_estimate: Option<i64>,
    /// Calibrated execution cost of the client code itself.
    pub client_overhead: Option<i64>,
}

impl InvocationRecord {
    pub fn duration_ms(&self) -> i64 {
        self.end_local - self.start_local
    }
}

/// Offset fields attached to a record line: `OFF <offset_ms> <uncertainty_ms>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OffsetStamp {
    pub offset_ms: i64,
    pub uncertainty_ms: i64,
}

/// A record as carried on the control channel and persisted in record files.
///
/// Without an offset stamp the timestamps are already global. With one they
/// are tester-local and the stamp names the offset in effect when the
/// invocation started.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordLine {
    pub record: InvocationRecord,
    pub offset: Option<OffsetStamp>,
}

fn opt_field(v: Option<i64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| v.to_string())
}

impl fmt::Display for RecordLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = &self.record;
        write!(
            f,
            "REC {} {} {} {} {} {} {}",
            r.tester_id,
            r.sequence,
            r.start_local,
            r.end_local,
            r.outcome,
            opt_field(r.latency_estimate),
            opt_field(r.client_overhead)
        )?;
        if let Some(off) = self.offset {
            write!(f, " OFF {} {}", off.offset_ms, off.uncertainty_ms)?;
        }
        Ok(())
    }
}

impl FromStr for RecordLine {
    type Err = ModelError;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let bad = || ModelError::MalformedRecord(line.to_string());
        let fields: Vec<&str> = line.split(' ').collect();
        if fields.first() != Some(&"REC") || !(fields.len() == 8 || fields.len() == 11) {
            return Err(bad());
        }
        let int = |s: &str| s.parse::<i64>().map_err(|_| bad());
        let opt = |s: &str| {
            if s == "-" {
                Ok(None)
            } else {
                int(s).map(Some)
            }
        };
        let record = InvocationRecord {
            tester_id: fields[1].parse().map_err(|_| bad())?,
            sequence: fields[2].parse().map_err(|_| bad())?,
            start_local: int(fields[3])?,
            end_local: int(fields[4])?,
            outcome: fields[5].parse()?,
            latency_estimate: opt(fields[6])?,
            client_overhead: opt(fields[7])?,
        };
        if record.end_local < record.start_local {
            return Err(bad());
        }
        let offset = if fields.len() == 11 {
            if fields[8] != "OFF" {
                return Err(bad());
            }
            let uncertainty_ms = int(fields[10])?;
            if uncertainty_ms < 0 {
                return Err(bad());
            }
            Some(OffsetStamp {
                offset_ms: int(fields[9])?,
                uncertainty_ms,
            })
        } else {
            None
        };
        Ok(RecordLine { record, offset })
    }
}

/// Mapping from a tester's local clock to global time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClockOffset {
    pub tester_id: u32,
    /// Added to local time to obtain global time.
    pub offset: i64,
    /// Half the round-trip time of the winning probe.
    pub uncertainty: i64,
    pub measured_at_local: i64,
}

impl ClockOffset {
    pub fn stamp(&self) -> OffsetStamp {
        OffsetStamp {
            offset_ms: self.offset,
            uncertainty_ms: self.uncertainty,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    /// Global seconds.
    pub start: i64,
    pub value: f64,
}

/// A time-quantized sequence of values. Every point start equals
/// `origin + k * quantum` for some integer `k`, strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub origin: i64,
    pub quantum: i64,
    pub points: Vec<SeriesPoint>,
}

impl MetricSeries {
    pub fn new(origin: i64, quantum: i64, points: Vec<SeriesPoint>) -> Result<Self, ModelError> {
        if quantum <= 0 {
            return Err(ModelError::InvalidSeries(format!(
                "quantum must be > 0, got {quantum}"
            )));
        }
        for p in &points {
            if (p.start - origin).rem_euclid(quantum) != 0 {
                return Err(ModelError::InvalidSeries(format!(
                    "point {} is not aligned to origin {origin} / quantum {quantum}",
                    p.start
                )));
            }
        }
        if points.windows(2).any(|w| w[0].start >= w[1].start) {
            return Err(ModelError::InvalidSeries(
                "point starts must be strictly increasing".into(),
            ));
        }
        Ok(MetricSeries {
            origin,
            quantum,
            points,
        })
    }

    pub fn empty(origin: i64, quantum: i64) -> Self {
        MetricSeries {
            origin,
            quantum,
            points: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.value)
    }

    pub fn sum(&self) -> f64 {
        self.values().sum()
    }
}

/// Exact ratio of two counts. `0/0` reads as zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    pub fn new(num: u64, den: u64) -> Self {
        Ratio { num, den }
    }

    pub fn value(&self) -> f64 {
        if self.den == 0 {
            0.0
        } else {
            self.num as f64 / self.den as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientStats {
    pub tester_id: u32,
    pub jobs_completed: u64,
    /// Global milliseconds, inclusive.
    pub active_window: (i64, i64),
    pub utilization: Ratio,
    /// Jobs served by the service while this client was active; absent when
    /// the client completed nothing.
    pub fairness: Option<u64>,
}
