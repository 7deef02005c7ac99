use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use crate::model::{ClockOffset, InvocationRecord, RecordLine};

use super::{normalize, AnalysisError, LatencyLegs, Normalized};

/// A tester dropped by the controller, with the controller's clock reading.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FailureMark {
    pub tester_id: u32,
    pub at_ms: i64,
    pub reason: String,
}

impl fmt::Display for FailureMark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FAIL {} {} {}", self.tester_id, self.at_ms, self.reason)
    }
}

/// Parsed contents of a record file.
///
/// Lines are `REC ...` records (optionally with an `OFF` suffix),
/// `FAIL <tester_id> <ms> <reason>` failure marks, blank lines and `#`
/// comments.
#[derive(Debug, Clone, Default)]
pub struct RecordFile {
    pub lines: Vec<RecordLine>,
    pub failures: Vec<FailureMark>,
}

impl RecordFile {
    pub fn parse(text: &str) -> Result<Self, AnalysisError> {
        let mut file = RecordFile::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: String| AnalysisError::Parse { line: i + 1, reason };
            if line.starts_with("REC ") {
                file.lines.push(line.parse().map_err(|e: crate::model::ModelError| err(e.to_string()))?);
            } else if let Some(rest) = line.strip_prefix("FAIL ") {
                let mut parts = rest.splitn(3, ' ');
                let tester_id = parts.next().and_then(|s| s.parse().ok());
                let at_ms = parts.next().and_then(|s| s.parse().ok());
                let (Some(tester_id), Some(at_ms)) = (tester_id, at_ms) else {
                    return Err(err(format!("malformed failure mark {line:?}")));
                };
                file.failures.push(FailureMark {
                    tester_id,
                    at_ms,
                    reason: parts.next().unwrap_or("").to_string(),
                });
            } else {
                return Err(err(format!("unrecognized line {line:?}")));
            }
        }
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self, AnalysisError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn records(&self) -> Vec<InvocationRecord> {
        self.lines.iter().map(|l| l.record.clone()).collect()
    }

    /// Rebuilds each tester's offset history from the stamps on its records.
    ///
    /// A tester attaches the offset current at each invocation's start and
    /// only changes offsets between invocations, so a change first seen on
    /// the record with sequence `s` was measured no later than that record's
    /// start. Records without a stamp are already global and get a zero
    /// offset valid from the beginning of time.
    pub fn offset_history(&self) -> BTreeMap<u32, Vec<ClockOffset>> {
        let mut by_tester: BTreeMap<u32, Vec<&RecordLine>> = BTreeMap::new();
        for l in &self.lines {
            by_tester.entry(l.record.tester_id).or_default().push(l);
        }
        let mut out = BTreeMap::new();
        for (tester_id, mut lines) in by_tester {
            lines.sort_by_key(|l| (l.record.sequence, l.record.start_local));
            let mut history: Vec<ClockOffset> = Vec::new();
            let mut current = None;
            for l in lines {
                let stamp = l.offset;
                if history.is_empty() || stamp != current {
                    let (offset, uncertainty, measured_at_local) = match stamp {
                        Some(s) => (s.offset_ms, s.uncertainty_ms, l.record.start_local),
                        None => (0, 0, i64::MIN),
                    };
                    history.push(ClockOffset {
                        tester_id,
                        offset,
                        uncertainty,
                        measured_at_local,
                    });
                    current = stamp;
                }
            }
            out.insert(tester_id, history);
        }
        out
    }

    pub fn normalize(&self, legs: LatencyLegs) -> Normalized {
        normalize(&self.records(), &self.offset_history(), legs)
    }
}
