//! Tester agent: repeatedly runs the client executable against the target,
//! times and classifies each run, resynchronizes its clock and streams
//! records back to the controller.
//!
//! Exactly one client is in flight per tester.

use std::collections::VecDeque;
use std::io::{self, BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::os::unix::process::CommandExt;
use std::process::{Command, ExitStatus, Stdio};
use std::sync::atomic::{AtomicBool, AtomicI64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender, TryRecvError};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use tracing::{debug, info, warn};

use crate::model::{ClockOffset, InvocationRecord, Outcome, RecordLine, TestDescription};
use crate::timesync::{self, LocalClock, ResyncSchedule, PROBES_PER_SYNC};
use crate::transport::{ControllerMsg, LineReceiver, LineSender, TesterMsg};

/// Slack allowed when checking pacing, half the typical clock skew observed
/// on wide-area testbeds.
pub const PACING_SLACK_MS: i64 = 50;

/// Connect attempts per target latency probe.
pub const LATENCY_PROBE_ATTEMPTS: usize = 3;

const PROBE_TIMEOUT: Duration = Duration::from_secs(1);
const POLL: Duration = Duration::from_millis(10);

/// Computes the earliest start of the next invocation.
///
/// A run shorter than the interval is followed by a wait for the remainder;
/// a longer one is followed immediately. An optional rate cap limits starts
/// in any one-second window.
#[derive(Debug, Clone)]
pub struct Pacer {
    interval_ms: i64,
    max_rate: Option<f64>,
    recent_starts: VecDeque<i64>,
    last: Option<(i64, i64)>,
}

impl Pacer {
    pub fn new(interval_ms: i64, max_rate: Option<f64>) -> Self {
        Pacer {
            interval_ms,
            max_rate,
            recent_starts: VecDeque::new(),
            last: None,
        }
    }

    /// `None` before the first invocation.
    pub fn next_start(&self) -> Option<i64> {
        let (start, end) = self.last?;
        let mut next = (start + self.interval_ms).max(end);
        match self.max_rate {
            Some(rate) if rate >= 1.0 => {
                let per_second = rate.floor() as usize;
                if self.recent_starts.len() >= per_second {
                    let idx = self.recent_starts.len() - per_second;
                    next = next.max(self.recent_starts[idx] + 1000);
                }
            }
            Some(rate) => {
                next = next.max(start + (1000.0 / rate).ceil() as i64);
            }
            None => {}
        }
        Some(next)
    }

    pub fn observe(&mut self, start: i64, end: i64) {
        self.last = Some((start, end));
        self.recent_starts.push_back(start);
        let keep = self.max_rate.map_or(1, |r| r.floor().max(1.0) as usize);
        while self.recent_starts.len() > keep {
            self.recent_starts.pop_front();
        }
    }
}

/// Events delivered to a running session from the control channel.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlEvent {
    Start(Box<TestDescription>),
    Stop,
    Disconnected(String),
}

/// Result of one client run, before it becomes a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClientRun {
    pub start_local: i64,
    pub end_local: i64,
    pub outcome: Outcome,
}

#[derive(Debug)]
pub enum Invocation {
    Finished(ClientRun),
    /// Stopped or disconnected mid-run; the client was killed and no record
    /// is produced.
    Aborted(ControlEvent),
}

fn expand_command(command: &str, target: &str) -> Option<Vec<String>> {
    let words = shlex::split(command)?;
    if words.is_empty() {
        return None;
    }
    Some(words.into_iter().map(|w| w.replace("{target}", target)).collect())
}

fn kill_group(pid: u32) {
    // SAFETY: plain signal delivery; the group id is the child's pid because
    // it was spawned with process_group(0).
    unsafe {
        libc::kill(-(pid as libc::pid_t), libc::SIGKILL);
    }
}

/// Spawns the client once and waits for it, enforcing `timeout_ms`.
///
/// Exit status 0 is `Success`, any other exit is `ServiceError`, a kill at
/// the timeout is `Timeout` and a spawn failure is `StartFailure`. Control
/// events seen while the client runs abort the invocation.
pub fn invoke_client(
    command: &str,
    target: &str,
    timeout_ms: i64,
    clock: &LocalClock,
    events: &Receiver<ControlEvent>,
) -> Invocation {
    let start_local = clock.now_ms();
    let start_failure = || {
        Invocation::Finished(ClientRun {
            start_local,
            end_local: clock.now_ms().max(start_local),
            outcome: Outcome::StartFailure,
        })
    };
    let Some(words) = expand_command(command, target) else {
        return start_failure();
    };
    let mut cmd = Command::new(&words[0]);
    cmd.args(&words[1..])
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .process_group(0);
    let mut child = match cmd.spawn() {
        Ok(c) => c,
        Err(e) => {
            debug!(error = %e, "client failed to start");
            return start_failure();
        }
    };
    let pid = child.id();
    let (exit_tx, exit_rx) = mpsc::channel::<(io::Result<ExitStatus>, i64)>();
    {
        let clock = clock.clone();
        thread::spawn(move || {
            let status = child.wait();
            let _ = exit_tx.send((status, clock.now_ms()));
        });
    }
    let deadline = start_local + timeout_ms;
    loop {
        match exit_rx.recv_timeout(POLL) {
            Ok((status, end_local)) => {
                let outcome = match status {
                    Ok(s) if s.success() => Outcome::Success,
                    Ok(_) => Outcome::ServiceError,
                    Err(_) => Outcome::StartFailure,
                };
                return Invocation::Finished(ClientRun {
                    start_local,
                    end_local: end_local.max(start_local),
                    outcome,
                });
            }
            Err(RecvTimeoutError::Disconnected) => return start_failure(),
            Err(RecvTimeoutError::Timeout) => {}
        }
        match events.try_recv() {
            Ok(ControlEvent::Start(_)) | Err(TryRecvError::Empty) | Err(TryRecvError::Disconnected) => {}
            Ok(ev) => {
                kill_group(pid);
                let _ = exit_rx.recv();
                return Invocation::Aborted(ev);
            }
        }
        if clock.now_ms() >= deadline {
            kill_group(pid);
            let end_local = exit_rx
                .recv()
                .map(|(_, t)| t)
                .unwrap_or_else(|_| clock.now_ms());
            return Invocation::Finished(ClientRun {
                start_local,
                end_local: end_local.max(deadline),
                outcome: Outcome::Timeout,
            });
        }
    }
}

/// Half the minimum of `attempts` round trips measured by `connect`.
/// `None` when every attempt failed.
pub fn probe_latency_with<F>(attempts: usize, mut connect: F) -> Option<i64>
where
    F: FnMut() -> io::Result<Duration>,
{
    (0..attempts)
        .filter_map(|_| connect().ok())
        .min()
        .map(|rtt| (rtt.as_micros() as i64 + 1000) / 2000)
}

/// One-way latency toward the target from TCP connect round trips.
pub fn probe_target_latency(target: &str) -> Option<i64> {
    let addr = timesync::resolve(target).ok()?;
    probe_latency_with(LATENCY_PROBE_ATTEMPTS, || {
        let t = Instant::now();
        let _stream = TcpStream::connect_timeout(&addr, PROBE_TIMEOUT)?;
        Ok(t.elapsed())
    })
}

/// Where a session puts its records.
pub trait RecordSink {
    fn emit(&mut self, line: &RecordLine) -> io::Result<()>;
}

impl RecordSink for Vec<RecordLine> {
    fn emit(&mut self, line: &RecordLine) -> io::Result<()> {
        self.push(line.clone());
        Ok(())
    }
}

/// Streams records over the control channel.
pub struct ChannelSink(pub LineSender);

impl RecordSink for ChannelSink {
    fn emit(&mut self, line: &RecordLine) -> io::Result<()> {
        self.0.send(&TesterMsg::Rec(line.clone()).to_line())
    }
}

/// Appends record lines to a writer, flushing each.
pub struct WriterSink<W: Write>(pub W);

impl<W: Write> RecordSink for WriterSink<W> {
    fn emit(&mut self, line: &RecordLine) -> io::Result<()> {
        writeln!(self.0, "{line}")?;
        self.0.flush()
    }
}

#[derive(Debug, Clone)]
pub struct SessionOptions {
    pub tester_id: u32,
    /// Calibrated client cost, reported in every record.
    pub client_overhead: Option<i64>,
    pub probe_timeout: Duration,
}

impl SessionOptions {
    pub fn new(tester_id: u32) -> Self {
        SessionOptions {
            tester_id,
            client_overhead: None,
            probe_timeout: PROBE_TIMEOUT,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SessionState {
    pub description: TestDescription,
    pub current_offset: Option<ClockOffset>,
    pub next_sequence: u64,
    pub deadline_local: i64,
    pub target_latency_estimate: Option<i64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SessionEnd {
    Completed,
    Stopped,
    Disconnected(String),
    SyncFailed(String),
    SinkClosed,
}

#[derive(Debug, Clone)]
pub struct SessionReport {
    pub end: SessionEnd,
    pub records: u64,
    pub resyncs: u32,
    pub offsets: Vec<ClockOffset>,
}

fn as_end(ev: ControlEvent) -> Option<SessionEnd> {
    match ev {
        ControlEvent::Start(_) => None,
        ControlEvent::Stop => Some(SessionEnd::Stopped),
        ControlEvent::Disconnected(reason) => Some(SessionEnd::Disconnected(reason)),
    }
}

/// Runs invocations until the deadline, a stop, or a disconnect.
///
/// Resynchronization happens between invocations only. Records carry the
/// offset current when the invocation started.
pub fn run_session(
    desc: &TestDescription,
    opts: &SessionOptions,
    clock: &LocalClock,
    sink: &mut dyn RecordSink,
    events: &Receiver<ControlEvent>,
) -> SessionReport {
    let session_start = clock.now_ms();
    let mut state = SessionState {
        description: desc.clone(),
        current_offset: None,
        next_sequence: 1,
        deadline_local: session_start + desc.duration_ms(),
        target_latency_estimate: None,
    };
    let mut report = SessionReport {
        end: SessionEnd::Completed,
        records: 0,
        resyncs: 0,
        offsets: Vec::new(),
    };
    let mut schedule = ResyncSchedule::new(desc.sync_interval_ms().max(1));
    let mut pacer = Pacer::new(desc.interval_ms(), desc.max_invocation_rate);

    let finish = |mut report: SessionReport, end| {
        report.end = end;
        report
    };

    loop {
        match events.try_recv() {
            Ok(ev) => {
                if let Some(end) = as_end(ev) {
                    return finish(report, end);
                }
            }
            Err(TryRecvError::Empty) | Err(TryRecvError::Disconnected) => {}
        }
        let now = clock.now_ms();
        if now >= state.deadline_local {
            return finish(report, SessionEnd::Completed);
        }

        if schedule.due(now) {
            match timesync::synchronize(
                &desc.timeserver_address,
                clock,
                opts.tester_id,
                PROBES_PER_SYNC,
                opts.probe_timeout,
            ) {
                Ok(off) => {
                    debug!(tester = opts.tester_id, offset = off.offset, uncertainty = off.uncertainty, "clock synchronized");
                    state.current_offset = Some(off);
                    report.offsets.push(off);
                }
                Err(e) if state.current_offset.is_none() => {
                    return finish(report, SessionEnd::SyncFailed(e.to_string()));
                }
                Err(e) => warn!(tester = opts.tester_id, error = %e, "resync failed, keeping previous offset"),
            }
            state.target_latency_estimate = probe_target_latency(&desc.target_address);
            report.resyncs += 1;
            schedule.mark(clock.now_ms());
            continue;
        }

        if let Some(next) = pacer.next_start() {
            if next > now {
                let wait_until = next.min(state.deadline_local);
                let wait = Duration::from_millis((wait_until - now).max(0) as u64);
                match events.recv_timeout(wait) {
                    Ok(ev) => {
                        if let Some(end) = as_end(ev) {
                            return finish(report, end);
                        }
                    }
                    Err(RecvTimeoutError::Timeout) => {}
                    Err(RecvTimeoutError::Disconnected) => thread::sleep(wait),
                }
                continue;
            }
        }

        let run = match invoke_client(
            &desc.client_command,
            &desc.target_address,
            desc.timeout_ms(),
            clock,
            events,
        ) {
            Invocation::Finished(run) => run,
            Invocation::Aborted(ev) => {
                return finish(report, as_end(ev).unwrap_or(SessionEnd::Stopped));
            }
        };
        let line = RecordLine {
            record: InvocationRecord {
                tester_id: opts.tester_id,
                sequence: state.next_sequence,
                start_local: run.start_local,
                end_local: run.end_local,
                outcome: run.outcome,
                latency_estimate: state.target_latency_estimate,
                client_overhead: opts.client_overhead,
            },
            offset: state.current_offset.map(|o| o.stamp()),
        };
        state.next_sequence += 1;
        pacer.observe(run.start_local, run.end_local);
        if sink.emit(&line).is_err() {
            return finish(report, SessionEnd::SinkClosed);
        }
        report.records += 1;
    }
}

/// Median client duration against a built-in no-op target that answers
/// every connection with `DONE`.
pub fn calibrate(command: &str, runs: u32, timeout_ms: i64, clock: &LocalClock) -> io::Result<i64> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?.to_string();
    let stop = Arc::new(AtomicBool::new(false));
    let echo = {
        let stop = stop.clone();
        thread::spawn(move || {
            for conn in listener.incoming() {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = conn else { continue };
                thread::spawn(move || {
                    let _ = stream.set_read_timeout(Some(Duration::from_secs(2)));
                    let mut line = String::new();
                    let _ = BufReader::new(&stream).read_line(&mut line);
                    let _ = (&stream).write_all(b"DONE\n");
                });
            }
        })
    };
    let (_keep, idle) = mpsc::channel();
    let mut durations = Vec::with_capacity(runs as usize);
    for _ in 0..runs.max(1) {
        if let Invocation::Finished(run) = invoke_client(command, &addr, timeout_ms, clock, &idle) {
            durations.push(run.end_local - run.start_local);
        }
    }
    stop.store(true, Ordering::SeqCst);
    let _ = TcpStream::connect(&addr);
    let _ = echo.join();
    durations.sort_unstable();
    Ok(durations[durations.len() / 2])
}

#[derive(Debug, Clone)]
pub struct AgentOptions {
    pub tester_id: u32,
    /// Controller heartbeat period; two missed beats mean disconnect.
    pub heartbeat: Duration,
    pub calibrate: Option<u32>,
    pub clock: LocalClock,
}

/// Why an agent exited.
#[derive(Debug, Clone, PartialEq)]
pub enum AgentExit {
    Session(SessionEnd),
    StoppedBeforeStart,
    DisconnectedBeforeStart(String),
    InvalidDescription(String),
}

/// Serves one controller over a line channel: waits for `START`, runs the
/// session, and answers `PING` throughout. Returns once the session is over
/// or the controller is gone.
pub fn run_agent(sender: LineSender, mut receiver: LineReceiver, opts: AgentOptions) -> AgentExit {
    let (tx, rx) = mpsc::channel::<ControlEvent>();
    let last_heard = Arc::new(AtomicI64::new(opts.clock.now_ms()));
    let done = Arc::new(AtomicBool::new(false));

    {
        let tx = tx.clone();
        let sender = sender.clone();
        let last_heard = last_heard.clone();
        let clock = opts.clock.clone();
        thread::spawn(move || loop {
            match receiver.recv() {
                Ok(Some(line)) => {
                    last_heard.store(clock.now_ms(), Ordering::SeqCst);
                    match ControllerMsg::parse(&line) {
                        Ok(ControllerMsg::Ping) => {
                            if sender.send(&TesterMsg::Pong.to_line()).is_err() {
                                let _ = tx.send(ControlEvent::Disconnected("channel write failed".into()));
                                return;
                            }
                        }
                        Ok(ControllerMsg::Start(desc)) => {
                            let _ = tx.send(ControlEvent::Start(Box::new(desc)));
                        }
                        Ok(ControllerMsg::Stop) => {
                            let _ = tx.send(ControlEvent::Stop);
                        }
                        Err(e) => warn!(error = %e, "ignoring control line"),
                    }
                }
                Ok(None) | Err(_) => {
                    let _ = tx.send(ControlEvent::Disconnected("channel closed".into()));
                    return;
                }
            }
        });
    }
    {
        let tx = tx.clone();
        let done = done.clone();
        let last_heard = last_heard.clone();
        let clock = opts.clock.clone();
        let limit = 2 * opts.heartbeat.as_millis() as i64;
        let tick = (opts.heartbeat / 20).clamp(Duration::from_millis(5), Duration::from_millis(100));
        thread::spawn(move || {
            while !done.load(Ordering::SeqCst) {
                if clock.now_ms() - last_heard.load(Ordering::SeqCst) > limit {
                    let _ = tx.send(ControlEvent::Disconnected("heartbeat timeout".into()));
                    return;
                }
                thread::sleep(tick);
            }
        });
    }
    drop(tx);

    let exit = serve(&sender, &rx, &opts);
    done.store(true, Ordering::SeqCst);
    exit
}

fn serve(sender: &LineSender, rx: &Receiver<ControlEvent>, opts: &AgentOptions) -> AgentExit {
    let desc = match rx.recv() {
        Ok(ControlEvent::Start(desc)) => *desc,
        Ok(ControlEvent::Stop) => {
            let _ = sender.send(&TesterMsg::Bye("stopped".into()).to_line());
            return AgentExit::StoppedBeforeStart;
        }
        Ok(ControlEvent::Disconnected(reason)) => return AgentExit::DisconnectedBeforeStart(reason),
        Err(_) => return AgentExit::DisconnectedBeforeStart("channel closed".into()),
    };
    let desc = match desc.validate() {
        Ok(d) => d,
        Err(e) => {
            let _ = sender.send(&TesterMsg::Bye(format!("invalid-description {e}")).to_line());
            return AgentExit::InvalidDescription(e.to_string());
        }
    };
    if sender.send(&TesterMsg::Ack.to_line()).is_err() {
        return AgentExit::DisconnectedBeforeStart("channel write failed".into());
    }
    let mut session = SessionOptions::new(opts.tester_id);
    if let Some(runs) = opts.calibrate {
        match calibrate(&desc.client_command, runs, desc.timeout_ms(), &opts.clock) {
            Ok(ms) => {
                info!(tester = opts.tester_id, overhead_ms = ms, "client calibrated");
                session.client_overhead = Some(ms);
            }
            Err(e) => warn!(error = %e, "calibration failed, no overhead subtraction"),
        }
    }
    let mut sink = ChannelSink(sender.clone());
    let report = run_session(&desc, &session, &opts.clock, &mut sink, rx);
    let bye = match &report.end {
        SessionEnd::Completed => Some("completed".to_string()),
        SessionEnd::Stopped => Some("stopped".to_string()),
        SessionEnd::SyncFailed(e) => Some(format!("timesync-failed {e}")),
        SessionEnd::Disconnected(_) | SessionEnd::SinkClosed => None,
    };
    if let Some(reason) = bye {
        let _ = sender.send(&TesterMsg::Bye(reason).to_line());
    }
    info!(tester = opts.tester_id, records = report.records, end = ?report.end, "session over");
    AgentExit::Session(report.end)
}

/// Runs a session without a controller, writing records to `out`.
pub fn run_standalone(
    desc: &TestDescription,
    opts: &SessionOptions,
    clock: &LocalClock,
    out: impl Write,
) -> SessionReport {
    let (_keep, rx) = mpsc::channel();
    let mut sink = WriterSink(out);
    run_session(desc, opts, clock, &mut sink, &rx)
}

/// Convenience for tests and tools: a sender whose events a session sees.
pub fn control_events() -> (Sender<ControlEvent>, Receiver<ControlEvent>) {
    mpsc::channel()
}
