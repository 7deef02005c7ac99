//! Experiment orchestration: pick testers, stage the client, launch testers
//! on a staggered ramp, collect their records and track liveness.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::Child;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread;
use std::time::Duration;

use thiserror::Error;
use tracing::{debug, info, warn};

use crate::analysis::{load_series, response_series, throughput_series, Bins, FailureMark, LatencyLegs, RecordFile};
use crate::model::{ModelError, Outcome, RecordLine, TestDescription};
use crate::timesync::LocalClock;
use crate::transport::{
    distribute_code, open_control_channel, probe_availability, ControllerMsg, LineReceiver, LineSender, NodeEndpoint,
    TesterMsg, TransportConfig, TransportError,
};

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error(transparent)]
    Description(#[from] ModelError),
    #[error("no tester available")]
    NoTesters,
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("record file: {0}")]
    Output(#[from] io::Error),
}

/// Everything needed to run one experiment.
#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    /// `client_command` holds the arguments given to the staged payload,
    /// with `{target}` substituted by the tester.
    pub description: TestDescription,
    pub candidates: Vec<NodeEndpoint>,
    pub ramp_delay: Duration,
    pub output_path: PathBuf,
    /// Client executable copied to every tester node.
    pub payload: PathBuf,
    pub transport: TransportConfig,
    pub heartbeat: Duration,
    /// Drop a tester after this many consecutive unsuccessful invocations.
    pub max_client_failures: Option<u32>,
    /// Calibration runs per tester before the session starts.
    pub calibrate: Option<u32>,
    pub probe_timeout: Duration,
    /// Extra tester arguments by tester id.
    pub per_tester_args: BTreeMap<u32, Vec<String>>,
}

impl ExperimentPlan {
    pub fn new(description: TestDescription, candidates: Vec<NodeEndpoint>, payload: PathBuf, output_path: PathBuf) -> Self {
        ExperimentPlan {
            description,
            candidates,
            ramp_delay: Duration::ZERO,
            output_path,
            payload,
            transport: TransportConfig::default(),
            heartbeat: Duration::from_secs(15),
            max_client_failures: None,
            calibrate: None,
            probe_timeout: Duration::from_secs(10),
            per_tester_args: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<(), ControllerError> {
        if self.candidates.is_empty() {
            return Err(ControllerError::InvalidPlan("at least one candidate node is required".into()));
        }
        if self.heartbeat.is_zero() {
            return Err(ControllerError::InvalidPlan("heartbeat must be > 0".into()));
        }
        if self.max_client_failures == Some(0) {
            return Err(ControllerError::InvalidPlan("max client failures must be >= 1".into()));
        }
        // the payload path is prepended later; validate what the tester will see
        let mut desc = self.description.clone();
        desc.client_command = format!("client {}", desc.client_command);
        desc.validate()?;
        Ok(())
    }
}

/// Span of an experiment where tester `i` starts at `i * ramp` and every
/// tester runs for `duration`.
pub fn planned_span(testers: u32, ramp: Duration, duration: Duration) -> Duration {
    ramp * testers.saturating_sub(1) + duration
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TesterState {
    Active,
    Failed { reason: String, at_ms: i64 },
    Finished,
}

struct Reporter {
    node_id: String,
    state: TesterState,
    sender: Option<LineSender>,
    launched_ms: i64,
    last_heard_ms: i64,
    last_ping_ms: i64,
    records: u64,
    consecutive_failures: u32,
}

/// Testers known to the controller, each active, failed or finished.
#[derive(Default)]
pub struct ReporterRegistry {
    reporters: BTreeMap<u32, Reporter>,
}

impl ReporterRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, tester_id: u32, node_id: &str, sender: Option<LineSender>, now_ms: i64) {
        self.reporters.insert(
            tester_id,
            Reporter {
                node_id: node_id.to_string(),
                state: TesterState::Active,
                sender,
                launched_ms: now_ms,
                last_heard_ms: now_ms,
                last_ping_ms: now_ms,
                records: 0,
                consecutive_failures: 0,
            },
        );
    }

    pub fn state(&self, tester_id: u32) -> Option<&TesterState> {
        self.reporters.get(&tester_id).map(|r| &r.state)
    }

    pub fn is_active(&self, tester_id: u32) -> bool {
        self.state(tester_id) == Some(&TesterState::Active)
    }

    pub fn active_ids(&self) -> Vec<u32> {
        self.reporters
            .iter()
            .filter(|(_, r)| r.state == TesterState::Active)
            .map(|(&id, _)| id)
            .collect()
    }

    pub fn records(&self, tester_id: u32) -> u64 {
        self.reporters.get(&tester_id).map_or(0, |r| r.records)
    }

    pub fn heard(&mut self, tester_id: u32, now_ms: i64) {
        if let Some(r) = self.reporters.get_mut(&tester_id) {
            r.last_heard_ms = now_ms;
        }
    }

    /// Accepts a record from an active tester, relabeled with the id the
    /// controller assigned. Records from anyone else are dropped.
    pub fn accept_record(&mut self, tester_id: u32, mut line: RecordLine) -> Option<RecordLine> {
        let r = self.reporters.get_mut(&tester_id)?;
        if r.state != TesterState::Active {
            debug!(tester = tester_id, "record after deregistration dropped");
            return None;
        }
        line.record.tester_id = tester_id;
        r.records += 1;
        if line.record.outcome == Outcome::Success {
            r.consecutive_failures = 0;
        } else {
            r.consecutive_failures += 1;
        }
        Some(line)
    }

    pub fn consecutive_failures(&self, tester_id: u32) -> u32 {
        self.reporters.get(&tester_id).map_or(0, |r| r.consecutive_failures)
    }

    /// Moves an active tester to failed and returns the failure mark. Later
    /// notices for the same tester, and notices for unknown ids, change
    /// nothing.
    pub fn on_tester_failure(&mut self, tester_id: u32, reason: &str, now_ms: i64) -> Option<FailureMark> {
        let Some(r) = self.reporters.get_mut(&tester_id) else {
            warn!(tester = tester_id, reason, "failure notice for unknown tester ignored");
            return None;
        };
        if r.state != TesterState::Active {
            return None;
        }
        r.state = TesterState::Failed {
            reason: reason.to_string(),
            at_ms: now_ms,
        };
        if let Some(sender) = r.sender.take() {
            let _ = sender.send(&ControllerMsg::Stop.to_line());
        }
        warn!(tester = tester_id, node = %r.node_id, reason, "tester removed from reporters");
        Some(FailureMark {
            tester_id,
            at_ms: now_ms,
            reason: reason.to_string(),
        })
    }

    pub fn on_tester_finished(&mut self, tester_id: u32) {
        if let Some(r) = self.reporters.get_mut(&tester_id) {
            if r.state == TesterState::Active {
                r.state = TesterState::Finished;
                r.sender = None;
            }
        }
    }
}

/// One point of the on-line view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiveSnapshot {
    /// Global start of the quantum, seconds.
    pub at: i64,
    pub throughput_per_min: f64,
    pub mean_load: f64,
    pub mean_response_ms: f64,
}

impl LiveSnapshot {
    pub const CSV_HEADER: &'static str = "time,throughput_per_min,load,response_ms";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.3},{:.3},{:.3}",
            self.at, self.throughput_per_min, self.mean_load, self.mean_response_ms
        )
    }
}

/// Rolling metrics over the records received so far. Late records can
/// revise a quantum already reported; offline analysis is authoritative.
#[derive(Debug, Clone)]
pub struct LiveView {
    quantum: i64,
    file: RecordFile,
}

impl LiveView {
    pub fn new(quantum: Duration) -> Self {
        LiveView {
            quantum: (quantum.as_secs() as i64).max(1),
            file: RecordFile::default(),
        }
    }

    pub fn push(&mut self, line: RecordLine) {
        self.file.lines.push(line);
    }

    /// Metrics for the quantum starting at global second `at`, which should
    /// be a multiple of the quantum.
    pub fn snapshot(&self, at: i64) -> LiveSnapshot {
        let records = self.file.normalize(LatencyLegs::Both).records;
        let bins = Bins::new(0, self.quantum);
        let k = bins.index(at * 1000);
        let per_sec = Bins::new(0, 1);
        let value_at = |s: &crate::model::MetricSeries, start: i64| {
            s.points.iter().find(|p| p.start == start).map_or(0.0, |p| p.value)
        };
        let throughput = value_at(&throughput_series(&records, bins), bins.start(k));
        let response = value_at(&response_series(&records, bins), bins.start(k));
        let load = load_series(&records, per_sec);
        let load_sum: f64 = (bins.start(k)..bins.start(k + 1)).map(|t| value_at(&load, t)).sum();
        LiveSnapshot {
            at: bins.start(k),
            throughput_per_min: throughput * 60.0 / self.quantum as f64,
            mean_load: load_sum / self.quantum as f64,
            mean_response_ms: response,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TesterSummary {
    pub tester_id: u32,
    pub node_id: String,
    pub launched_ms: i64,
    pub records: u64,
    pub state: TesterState,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentSummary {
    pub testers: Vec<TesterSummary>,
    pub failures: Vec<FailureMark>,
    /// Candidates that did not answer the availability probe.
    pub unavailable: Vec<String>,
    /// Nodes where staging the client failed, with the error.
    pub undeployed: Vec<(String, String)>,
    pub started_ms: i64,
    pub finished_ms: i64,
}

impl ExperimentSummary {
    pub fn span(&self) -> Duration {
        Duration::from_millis((self.finished_ms - self.started_ms).max(0) as u64)
    }

    pub fn total_records(&self) -> u64 {
        self.testers.iter().map(|t| t.records).sum()
    }
}

impl fmt::Display for ExperimentSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "testers {}", self.testers.len())?;
        writeln!(f, "records {}", self.total_records())?;
        writeln!(f, "span_s {:.3}", self.span().as_secs_f64())?;
        for t in &self.testers {
            let state = match &t.state {
                TesterState::Active => "active".to_string(),
                TesterState::Finished => "finished".to_string(),
                TesterState::Failed { reason, at_ms } => format!("failed at {at_ms}: {reason}"),
            };
            writeln!(f, "tester {} node={} records={} {}", t.tester_id, t.node_id, t.records, state)?;
        }
        for node in &self.unavailable {
            writeln!(f, "unavailable {node}")?;
        }
        for (node, err) in &self.undeployed {
            writeln!(f, "undeployed {node}: {err}")?;
        }
        Ok(())
    }
}

struct Shared {
    registry: ReporterRegistry,
    out: BufWriter<File>,
    failures: Vec<FailureMark>,
    live: Option<LiveView>,
    children: BTreeMap<u32, Child>,
    /// When to kill the process of a failed tester that has not exited.
    kill_at: BTreeMap<u32, i64>,
    write_error: Option<io::Error>,
}

struct Run {
    shared: Mutex<Shared>,
    clock: LocalClock,
    heartbeat_ms: i64,
    max_client_failures: Option<u32>,
    done: AtomicBool,
}

/// Grace period between asking a failed tester to stop and killing it.
const STOP_GRACE_MS: i64 = 2000;

impl Run {
    fn lock(&self) -> MutexGuard<'_, Shared> {
        self.shared.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn fail(&self, g: &mut Shared, tester_id: u32, reason: &str) {
        let now = self.clock.now_ms();
        if let Some(mark) = g.registry.on_tester_failure(tester_id, reason, now) {
            write_line(g, &mark.to_string());
            g.failures.push(mark);
            g.kill_at.insert(tester_id, now + STOP_GRACE_MS);
        }
    }

    fn handle_channel(&self, tester_id: u32, mut receiver: LineReceiver) {
        loop {
            let line = receiver.recv();
            let mut g = self.lock();
            let line = match line {
                Ok(Some(line)) => line,
                Ok(None) | Err(_) => {
                    self.fail(&mut g, tester_id, "disconnect");
                    return;
                }
            };
            g.registry.heard(tester_id, self.clock.now_ms());
            match TesterMsg::parse(&line) {
                Ok(TesterMsg::Ack) => debug!(tester = tester_id, "session started"),
                Ok(TesterMsg::Pong) => {}
                Ok(TesterMsg::Rec(rec)) => {
                    if let Some(rec) = g.registry.accept_record(tester_id, rec) {
                        write_line(&mut g, &rec.to_string());
                        if let Some(live) = g.live.as_mut() {
                            live.push(rec);
                        }
                        if self
                            .max_client_failures
                            .is_some_and(|n| g.registry.consecutive_failures(tester_id) >= n)
                        {
                            self.fail(&mut g, tester_id, "client failures");
                        }
                    }
                }
                Ok(TesterMsg::Bye(reason)) => {
                    if reason == "completed" || reason == "stopped" {
                        g.registry.on_tester_finished(tester_id);
                    } else {
                        self.fail(&mut g, tester_id, &reason);
                    }
                }
                Err(e) => warn!(tester = tester_id, error = %e, "unparseable line from tester"),
            }
        }
    }

    /// Pings active testers every heartbeat, fails the silent ones and
    /// kills failed testers that outlive their grace period.
    fn watch(&self) {
        let tick = Duration::from_millis((self.heartbeat_ms / 4).clamp(10, 250) as u64);
        while !self.done.load(Ordering::SeqCst) {
            thread::sleep(tick);
            let now = self.clock.now_ms();
            let mut g = self.lock();
            let mut silent = Vec::new();
            let mut broken = Vec::new();
            for (&id, r) in g.registry.reporters.iter_mut() {
                if r.state != TesterState::Active {
                    continue;
                }
                if now - r.last_heard_ms > 2 * self.heartbeat_ms {
                    silent.push(id);
                } else if now - r.last_ping_ms >= self.heartbeat_ms {
                    r.last_ping_ms = now;
                    if let Some(s) = &r.sender {
                        if s.send(&ControllerMsg::Ping.to_line()).is_err() {
                            broken.push(id);
                        }
                    }
                }
            }
            for id in silent {
                self.fail(&mut g, id, "heartbeat timeout");
            }
            for id in broken {
                self.fail(&mut g, id, "disconnect");
            }
            let due: Vec<u32> = g.kill_at.iter().filter(|(_, &t)| t <= now).map(|(&id, _)| id).collect();
            for id in due {
                g.kill_at.remove(&id);
                if let Some(child) = g.children.get_mut(&id) {
                    if matches!(child.try_wait(), Ok(None)) {
                        warn!(tester = id, "killing unresponsive tester");
                        let _ = child.kill();
                    }
                }
            }
        }
    }
}

fn write_line(g: &mut Shared, line: &str) {
    if g.write_error.is_some() {
        return;
    }
    let res = writeln!(g.out, "{line}").and_then(|_| g.out.flush());
    if let Err(e) = res {
        warn!(error = %e, "record file write failed");
        g.write_error = Some(e);
    }
}

/// Where live snapshots go and how often.
pub struct LiveOutput {
    pub quantum: Duration,
    pub sink: Box<dyn Write + Send>,
}

/// Runs an experiment to completion and writes the record file.
pub fn run_experiment(plan: &ExperimentPlan, live: Option<LiveOutput>) -> Result<ExperimentSummary, ControllerError> {
    plan.validate()?;
    let clock = LocalClock::system();
    let started_ms = clock.now_ms();
    let mut summary = ExperimentSummary {
        started_ms,
        ..Default::default()
    };

    let available = probe_availability(&plan.transport, &plan.candidates, plan.probe_timeout);
    summary.unavailable = plan
        .candidates
        .iter()
        .filter(|c| !available.iter().any(|a| a.node_id == c.node_id))
        .map(|c| c.node_id.clone())
        .collect();
    if available.is_empty() {
        return Err(ControllerError::NoTesters);
    }
    let deployment = distribute_code(&plan.transport, &plan.payload, &available)?;
    summary.undeployed = deployment
        .failed()
        .map(|(n, e)| (n.node_id.clone(), e.to_string()))
        .collect();
    let testers: Vec<(u32, NodeEndpoint, String)> = deployment
        .succeeded()
        .zip(1u32..)
        .map(|((node, staged), id)| (id, node.clone(), staged.path.clone()))
        .collect();
    if testers.is_empty() {
        return Err(ControllerError::NoTesters);
    }
    info!(
        testers = testers.len(),
        span_s = planned_span(testers.len() as u32, plan.ramp_delay, Duration::from_millis(plan.description.duration_ms() as u64)).as_secs(),
        "launching"
    );

    let mut out = BufWriter::new(File::create(&plan.output_path)?);
    writeln!(out, "# diperf records, {} testers", testers.len())?;
    out.flush()?;

    let (live_quantum, mut live_sink) = match live {
        Some(l) => (Some(l.quantum), Some(l.sink)),
        None => (None, None),
    };
    let run = Arc::new(Run {
        shared: Mutex::new(Shared {
            registry: ReporterRegistry::new(),
            out,
            failures: Vec::new(),
            live: live_quantum.map(LiveView::new),
            children: BTreeMap::new(),
            kill_at: BTreeMap::new(),
            write_error: None,
        }),
        clock: clock.clone(),
        heartbeat_ms: plan.heartbeat.as_millis() as i64,
        max_client_failures: plan.max_client_failures,
        done: AtomicBool::new(false),
    });

    let watcher = {
        let run = run.clone();
        thread::spawn(move || run.watch())
    };
    let live_thread = live_quantum.zip(live_sink.take()).map(|(quantum, mut sink)| {
        let run = run.clone();
        thread::spawn(move || {
            let q = (quantum.as_secs() as i64).max(1);
            let _ = writeln!(sink, "{}", LiveSnapshot::CSV_HEADER);
            let mut next = (run.clock.now_ms() / 1000 / q + 1) * q;
            while !run.done.load(Ordering::SeqCst) {
                if run.clock.now_ms() < next * 1000 {
                    thread::sleep(Duration::from_millis(100));
                    continue;
                }
                let view = run.lock().live.clone();
                if let Some(view) = view {
                    let _ = writeln!(sink, "{}", view.snapshot(next - q).csv_row());
                    let _ = sink.flush();
                }
                next += q;
            }
        })
    });

    let mut handlers = Vec::new();
    for (i, (id, node, staged_path)) in testers.iter().enumerate() {
        let launch_at = started_ms + (plan.ramp_delay * i as u32).as_millis() as i64;
        let wait = launch_at - clock.now_ms();
        if wait > 0 {
            thread::sleep(Duration::from_millis(wait as u64));
        }
        let mut args = vec![
            "--id".to_string(),
            id.to_string(),
            "--heartbeat-ms".to_string(),
            plan.heartbeat.as_millis().to_string(),
        ];
        if let Some(n) = plan.calibrate {
            args.extend(["--calibrate".to_string(), n.to_string()]);
        }
        if let Some(extra) = plan.per_tester_args.get(id) {
            args.extend(extra.iter().cloned());
        }
        let mut desc = plan.description.clone();
        let quoted = shlex::try_quote(staged_path).map(|q| q.into_owned()).unwrap_or_else(|_| staged_path.clone());
        desc.client_command = if desc.client_command.trim().is_empty() {
            quoted
        } else {
            format!("{quoted} {}", desc.client_command)
        };

        let now = clock.now_ms();
        let channel = match open_control_channel(&plan.transport, node, &args) {
            Ok(c) => c,
            Err(e) => {
                let mut g = run.lock();
                g.registry.register(*id, &node.node_id, None, now);
                run.fail(&mut g, *id, &format!("launch: {e}"));
                continue;
            }
        };
        {
            let mut g = run.lock();
            g.registry.register(*id, &node.node_id, Some(channel.sender.clone()), now);
            if let Some(child) = channel.process {
                g.children.insert(*id, child);
            }
            if channel.sender.send(&ControllerMsg::Start(desc).to_line()).is_err() {
                run.fail(&mut g, *id, "disconnect");
            }
        }
        info!(tester = id, node = %node.node_id, "tester launched");
        let run = run.clone();
        let id = *id;
        let receiver = channel.receiver;
        handlers.push(thread::spawn(move || run.handle_channel(id, receiver)));
    }

    for h in handlers {
        let _ = h.join();
    }
    run.done.store(true, Ordering::SeqCst);
    let _ = watcher.join();
    if let Some(t) = live_thread {
        let _ = t.join();
    }

    let mut g = run.lock();
    for child in g.children.values_mut() {
        if matches!(child.try_wait(), Ok(None)) {
            let _ = child.kill();
        }
        let _ = child.wait();
    }
    if let Some(e) = g.write_error.take() {
        return Err(ControllerError::Output(e));
    }
    summary.testers = g
        .registry
        .reporters
        .iter()
        .map(|(&tester_id, r)| TesterSummary {
            tester_id,
            node_id: r.node_id.clone(),
            launched_ms: r.launched_ms,
            records: r.records,
            state: r.state.clone(),
        })
        .collect();
    summary.failures = std::mem::take(&mut g.failures);
    summary.finished_ms = clock.now_ms();
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{InvocationRecord, OffsetStamp};

    fn line(outcome: Outcome, start: i64) -> RecordLine {
        RecordLine {
            record: InvocationRecord {
                tester_id: 99,
                sequence: 1,
                start_local: start,
                end_local: start + 500,
                outcome,
                latency_estimate: None,
                client_overhead: None,
            },
            offset: Some(OffsetStamp {
                offset_ms: 0,
                uncertainty_ms: 0,
            }),
        }
    }

    #[test]
    fn planned_spans() {
        let s = |n, ramp, dur| planned_span(n, Duration::from_secs(ramp), Duration::from_secs(dur)).as_secs();
        assert_eq!(s(89, 25, 3600), 5800);
        assert_eq!(s(26, 25, 3600), 4225);
        assert_eq!(s(1, 0, 600), 600);
        assert_eq!(s(0, 25, 600), 600);
    }

    #[test]
    fn failure_is_idempotent_and_cuts_off_records() {
        let mut reg = ReporterRegistry::new();
        reg.register(3, "n3", None, 0);
        let rec = reg.accept_record(3, line(Outcome::Success, 10)).unwrap();
        assert_eq!(rec.record.tester_id, 3);
        let mark = reg.on_tester_failure(3, "disconnect", 100).unwrap();
        assert_eq!(mark.to_string(), "FAIL 3 100 disconnect");
        assert_eq!(reg.on_tester_failure(3, "disconnect", 200), None);
        assert_eq!(
            reg.state(3),
            Some(&TesterState::Failed {
                reason: "disconnect".into(),
                at_ms: 100
            })
        );
        assert!(reg.accept_record(3, line(Outcome::Success, 150)).is_none());
        assert_eq!(reg.records(3), 1);
    }

    #[test]
    fn unknown_tester_is_ignored() {
        let mut reg = ReporterRegistry::new();
        assert_eq!(reg.on_tester_failure(7, "disconnect", 0), None);
        assert!(reg.accept_record(7, line(Outcome::Success, 0)).is_none());
    }

    #[test]
    fn states_are_exclusive() {
        let mut reg = ReporterRegistry::new();
        reg.register(1, "a", None, 0);
        reg.register(2, "b", None, 0);
        reg.on_tester_finished(1);
        assert_eq!(reg.on_tester_failure(1, "late", 5), None);
        assert_eq!(reg.state(1), Some(&TesterState::Finished));
        reg.on_tester_failure(2, "x", 5);
        reg.on_tester_finished(2);
        assert!(matches!(reg.state(2), Some(TesterState::Failed { .. })));
        assert!(reg.active_ids().is_empty());
    }

    #[test]
    fn consecutive_failures_reset_on_success() {
        let mut reg = ReporterRegistry::new();
        reg.register(1, "a", None, 0);
        reg.accept_record(1, line(Outcome::ServiceError, 0));
        reg.accept_record(1, line(Outcome::Timeout, 0));
        assert_eq!(reg.consecutive_failures(1), 2);
        reg.accept_record(1, line(Outcome::Success, 0));
        assert_eq!(reg.consecutive_failures(1), 0);
    }

    #[test]
    fn live_view_snapshots() {
        let mut view = LiveView::new(Duration::from_secs(60));
        assert_eq!(
            view.snapshot(0),
            LiveSnapshot {
                at: 0,
                throughput_per_min: 0.0,
                mean_load: 0.0,
                mean_response_ms: 0.0
            }
        );
        // one job per second, each 500 ms
        for i in 0..120 {
            view.push(line(Outcome::Success, 60_000 + i * 1000));
        }
        let s = view.snapshot(60);
        assert_eq!(s.throughput_per_min, 60.0);
        assert_eq!(s.mean_response_ms, 500.0);
        assert_eq!(s.mean_load, 1.0);
    }
}
