//! Helpers shared by the integration suites: payload scripts, brute-force
//! metric oracles, random record generators and a closed-loop queue
//! simulator.

#![allow(dead_code)]

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::fs;
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};

use diperf::analysis::GlobalRecord;
use diperf::model::{ClockOffset, InvocationRecord, Outcome};
use diperf::transport::NodeEndpoint;
use rand::Rng;

pub fn diperf_bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_diperf"))
}

pub fn write_script(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, format!("#!/bin/sh\n{body}\n")).unwrap();
    fs::set_permissions(&path, fs::Permissions::from_mode(0o755)).unwrap();
    path
}

/// Client payload that makes one request to the queueing mock service.
pub fn mock_client_payload(dir: &Path) -> PathBuf {
    write_script(
        dir,
        "mock-client.sh",
        &format!("exec '{}' mock-client --target \"$1\"", diperf_bin().display()),
    )
}

/// Client payload that GETs its first argument.
pub fn http_client_payload(dir: &Path) -> PathBuf {
    write_script(
        dir,
        "http-get.sh",
        &format!("exec '{}' http-get \"$1\" --timeout 30", diperf_bin().display()),
    )
}

pub fn local_nodes(n: usize) -> Vec<NodeEndpoint> {
    (1..=n).map(|i| NodeEndpoint::local(format!("node{i:03}"))).collect()
}

pub fn success(tester_id: u32, sequence: u64, start: i64, end: i64) -> GlobalRecord {
    GlobalRecord {
        tester_id,
        sequence,
        start_global: start,
        end_global: end,
        outcome: Outcome::Success,
        response_time: Some(end - start),
    }
}

/// Random normalized records: up to `testers` testers, starts within
/// `span_ms`, mixed outcomes.
pub fn random_global_records(rng: &mut impl Rng, n: usize, testers: u32, span_ms: i64) -> Vec<GlobalRecord> {
    let mut seq: BTreeMap<u32, u64> = BTreeMap::new();
    let mut out: Vec<GlobalRecord> = (0..n)
        .map(|_| {
            let tester_id = rng.random_range(1..=testers);
            let s = seq.entry(tester_id).or_insert(0);
            *s += 1;
            let start = rng.random_range(0..span_ms);
            let end = start + rng.random_range(0..30_000);
            let outcome = Outcome::ALL[rng.random_range(0..Outcome::ALL.len())];
            GlobalRecord {
                tester_id,
                sequence: *s,
                start_global: start,
                end_global: end,
                outcome,
                response_time: outcome.is_success().then(|| rng.random_range(0..=end - start)),
            }
        })
        .collect();
    out.sort_by_key(|r| (r.start_global, r.tester_id, r.sequence));
    out
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * a.abs().max(b.abs())
}

// ---- brute-force oracles ----

fn floor_div(a: i64, b: i64) -> i64 {
    let q = a / b;
    if (a % b != 0) && ((a < 0) != (b < 0)) {
        q - 1
    } else {
        q
    }
}

/// Successes per quantum by end time, every quantum between the first and
/// last completion listed.
pub fn oracle_throughput(records: &[GlobalRecord], origin: i64, quantum: i64) -> Vec<(i64, f64)> {
    let ends: Vec<i64> = records.iter().filter(|r| r.is_success()).map(|r| r.end_global).collect();
    if ends.is_empty() {
        return Vec::new();
    }
    let q_ms = quantum * 1000;
    let k_of = |t: i64| floor_div(t - origin * 1000, q_ms);
    let kmin = ends.iter().map(|&t| k_of(t)).min().unwrap();
    let kmax = ends.iter().map(|&t| k_of(t)).max().unwrap();
    (kmin..=kmax)
        .map(|k| {
            let lo = origin * 1000 + k * q_ms;
            let count = ends.iter().filter(|&&t| lo <= t && t < lo + q_ms).count();
            (origin + k * quantum, count as f64)
        })
        .collect()
}

/// In-flight records at each quantum start, trimmed to the first and last
/// nonzero instant.
pub fn oracle_load(records: &[GlobalRecord], origin: i64, quantum: i64) -> Vec<(i64, f64)> {
    if records.is_empty() {
        return Vec::new();
    }
    let q_ms = quantum * 1000;
    let lo = records.iter().map(|r| r.start_global).min().unwrap();
    let hi = records.iter().map(|r| r.end_global).max().unwrap();
    let kmin = floor_div(lo - origin * 1000, q_ms) - 1;
    let kmax = floor_div(hi - origin * 1000, q_ms) + 1;
    let mut pts: Vec<(i64, f64)> = (kmin..=kmax)
        .map(|k| {
            let t = origin * 1000 + k * q_ms;
            let n = records.iter().filter(|r| r.start_global <= t && t < r.end_global).count();
            (origin + k * quantum, n as f64)
        })
        .collect();
    while pts.first().is_some_and(|p| p.1 == 0.0) {
        pts.remove(0);
    }
    while pts.last().is_some_and(|p| p.1 == 0.0) {
        pts.pop();
    }
    pts
}

pub fn oracle_response(records: &[GlobalRecord], origin: i64, quantum: i64) -> Vec<(i64, f64)> {
    let q_ms = quantum * 1000;
    let mut ks: Vec<i64> = records
        .iter()
        .filter(|r| r.is_success())
        .map(|r| floor_div(r.end_global - origin * 1000, q_ms))
        .collect();
    ks.sort_unstable();
    ks.dedup();
    ks.into_iter()
        .map(|k| {
            let lo = origin * 1000 + k * q_ms;
            let rts: Vec<i64> = records
                .iter()
                .filter(|r| r.is_success() && lo <= r.end_global && r.end_global < lo + q_ms)
                .map(|r| r.response_time.unwrap())
                .collect();
            (origin + k * quantum, rts.iter().sum::<i64>() as f64 / rts.len() as f64)
        })
        .collect()
}

pub fn oracle_windows(records: &[GlobalRecord]) -> BTreeMap<u32, (i64, i64)> {
    let ids: Vec<u32> = {
        let mut v: Vec<u32> = records.iter().map(|r| r.tester_id).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    ids.into_iter()
        .map(|id| {
            let mine = records.iter().filter(|r| r.tester_id == id);
            let a = mine.clone().map(|r| r.start_global).min().unwrap();
            let b = mine.map(|r| r.end_global).max().unwrap();
            (id, (a, b))
        })
        .collect()
}

/// Longest run of boundary points and gaps where the count of closed active
/// windows is at its maximum.
pub fn oracle_peak_window(records: &[GlobalRecord]) -> Option<(i64, i64)> {
    let windows: Vec<(i64, i64)> = oracle_windows(records).into_values().collect();
    let mut times: Vec<i64> = windows.iter().flat_map(|&(a, b)| [a, b]).collect();
    times.sort_unstable();
    times.dedup();
    if times.is_empty() {
        return None;
    }
    let at = |t: f64| windows.iter().filter(|&&(a, b)| a as f64 <= t && t <= b as f64).count();
    // alternate: point, gap, point, gap, ...
    let mut samples: Vec<(i64, usize)> = Vec::new();
    for (i, &t) in times.iter().enumerate() {
        samples.push((t, at(t as f64)));
        if let Some(&next) = times.get(i + 1) {
            samples.push((t, at((t as f64 + next as f64) / 2.0)));
        }
    }
    let max = samples.iter().map(|s| s.1).max().unwrap();
    let mut best: Option<(i64, i64)> = None;
    let mut i = 0;
    while i < samples.len() {
        if samples[i].1 != max {
            i += 1;
            continue;
        }
        let mut j = i;
        while j + 1 < samples.len() && samples[j + 1].1 == max {
            j += 1;
        }
        // a run ends on a point sample (closed windows)
        let start = samples[i].0;
        let end = if j % 2 == 0 { samples[j].0 } else { times[j / 2 + 1] };
        if best.is_none_or(|(x, y)| end - start > y - x) {
            best = Some((start, end));
        }
        i = j + 1;
    }
    best
}

/// (tester_id, jobs, total) per tester.
pub fn oracle_client_counts(records: &[GlobalRecord], peak: (i64, i64)) -> Vec<(u32, u64, u64)> {
    oracle_windows(records)
        .into_iter()
        .map(|(id, (a, b))| {
            let w0 = a.max(peak.0);
            let w1 = b.min(peak.1);
            let in_w = |r: &&GlobalRecord| r.is_success() && w0 <= r.end_global && r.end_global <= w1;
            let jobs = records.iter().filter(in_w).filter(|r| r.tester_id == id).count() as u64;
            let total = records.iter().filter(in_w).count() as u64;
            (id, jobs, total)
        })
        .collect()
}

pub fn oracle_moving_average(points: &[(i64, f64)], window: i64) -> Vec<(i64, f64)> {
    points
        .iter()
        .map(|&(t, _)| {
            let inside: Vec<f64> = points
                .iter()
                .filter(|&&(u, _)| t - window < u && u <= t)
                .map(|&(_, v)| v)
                .collect();
            (t, inside.iter().sum::<f64>() / inside.len() as f64)
        })
        .collect()
}

/// Record-by-record mapping to global time with the latest offset measured
/// at or before the start; later history entries win ties.
pub fn oracle_global_start(record: &InvocationRecord, history: &[ClockOffset]) -> Option<i64> {
    let mut chosen: Option<&ClockOffset> = None;
    for o in history {
        if o.measured_at_local <= record.start_local
            && chosen.is_none_or(|c| o.measured_at_local >= c.measured_at_local)
        {
            chosen = Some(o);
        }
    }
    chosen.map(|o| record.start_local + o.offset)
}

// ---- closed-loop FIFO queue simulator ----

#[derive(Debug, Clone, Copy)]
pub struct SimClient {
    pub tester_id: u32,
    pub launch_ms: i64,
    pub session_ms: i64,
}

/// Clients each keep one request outstanding, starting the next at
/// `max(start + interval, end)` until their session ends; requests are served
/// first come first served by `slots` servers taking `service_ms` each.
pub fn simulate_fifo(slots: usize, service_ms: i64, interval_ms: i64, clients: &[SimClient]) -> Vec<GlobalRecord> {
    let mut arrivals: BinaryHeap<Reverse<(i64, u32)>> = clients.iter().map(|c| Reverse((c.launch_ms, c.tester_id))).collect();
    let by_id: BTreeMap<u32, SimClient> = clients.iter().map(|c| (c.tester_id, *c)).collect();
    let mut free_at: BinaryHeap<Reverse<i64>> = (0..slots).map(|_| Reverse(i64::MIN)).collect();
    let mut seq: BTreeMap<u32, u64> = BTreeMap::new();
    let mut out = Vec::new();
    while let Some(Reverse((t, id))) = arrivals.pop() {
        let c = by_id[&id];
        if t >= c.launch_ms + c.session_ms {
            continue;
        }
        let Reverse(free) = free_at.pop().unwrap();
        let begin = t.max(free);
        let end = begin + service_ms;
        free_at.push(Reverse(end));
        let s = seq.entry(id).or_insert(0);
        *s += 1;
        out.push(success(id, *s, t, end));
        arrivals.push(Reverse(((t + interval_ms).max(end), id)));
    }
    out.sort_by_key(|r| (r.start_global, r.tester_id, r.sequence));
    out
}
