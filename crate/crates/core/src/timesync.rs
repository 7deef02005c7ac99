//! Central time-stamp server and client-side offset estimation.
//!
//! Testers never adjust their clocks. They probe the server, estimate an
//! additive offset with the round-trip midpoint of the fastest probe, and the
//! offsets are applied when records are analyzed.

use std::io::{self, BufRead, BufReader, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use thiserror::Error;
use tracing::{debug, warn};

use crate::model::ClockOffset;

/// Probes taken per resynchronization.
pub const PROBES_PER_SYNC: usize = 5;

#[derive(Debug, Error)]
pub enum TimeSyncError {
    #[error("no probes to estimate from")]
    NoProbes,
    #[error("probe received before it was sent ({recv} < {send})")]
    InvalidProbe { send: i64, recv: i64 },
    #[error("cannot resolve time server address {0}")]
    Resolve(String),
    #[error("time server protocol error: {0}")]
    Protocol(String),
    #[error("time server unreachable: {0}")]
    Io(#[from] io::Error),
}

/// A millisecond clock that never runs backwards. The skew lets one host
/// stand in for many badly synchronized nodes.
#[derive(Debug, Clone)]
pub struct LocalClock {
    base_ms: i64,
    origin: Instant,
    skew_ms: i64,
}

impl LocalClock {
    pub fn system() -> Self {
        Self::with_skew(0)
    }

    pub fn with_skew(skew_ms: i64) -> Self {
        let base_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as i64)
            .unwrap_or(0);
        LocalClock {
            base_ms,
            origin: Instant::now(),
            skew_ms,
        }
    }

    pub fn now_ms(&self) -> i64 {
        self.base_ms + self.origin.elapsed().as_millis() as i64 + self.skew_ms
    }

    pub fn skew_ms(&self) -> i64 {
        self.skew_ms
    }
}

/// One request/response exchange with the time server.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeProbe {
    /// Local clock when the request was sent.
    pub send_local: i64,
    /// Server clock when it answered.
    pub server_time: i64,
    /// Local clock when the answer arrived.
    pub recv_local: i64,
}

impl TimeProbe {
    pub fn round_trip(&self) -> i64 {
        self.recv_local - self.send_local
    }
}

/// Midpoint estimate from the probe with the smallest round trip.
/// Ties go to the earliest probe.
pub fn estimate_offset(tester_id: u32, probes: &[TimeProbe]) -> Result<ClockOffset, TimeSyncError> {
    let mut best: Option<&TimeProbe> = None;
    for p in probes {
        if p.recv_local < p.send_local {
            return Err(TimeSyncError::InvalidProbe {
                send: p.send_local,
                recv: p.recv_local,
            });
        }
        if best.is_none_or(|b| p.round_trip() < b.round_trip()) {
            best = Some(p);
        }
    }
    let best = best.ok_or(TimeSyncError::NoProbes)?;
    let measured_at_local = probes.iter().map(|p| p.recv_local).max().unwrap_or(best.recv_local);
    Ok(ClockOffset {
        tester_id,
        offset: best.server_time - (best.send_local + best.recv_local).div_euclid(2),
        uncertainty: best.round_trip().div_euclid(2),
        measured_at_local,
    })
}

pub fn to_global(local_ms: i64, offset: &ClockOffset) -> i64 {
    local_ms + offset.offset
}

/// The latest offset measured at or before `local_ms`. On equal measurement
/// times the later entry wins.
pub fn select_offset(history: &[ClockOffset], local_ms: i64) -> Option<&ClockOffset> {
    history
        .iter()
        .filter(|o| o.measured_at_local <= local_ms)
        .fold(None, |acc: Option<&ClockOffset>, o| match acc {
            Some(a) if a.measured_at_local > o.measured_at_local => Some(a),
            _ => Some(o),
        })
}

pub fn next_probe_time(last_probe_local: i64, sync_interval_ms: i64) -> i64 {
    last_probe_local + sync_interval_ms
}

/// Tracks when the next resynchronization is due. Checked only between
/// invocations, so a probe may fire up to one invocation late.
#[derive(Debug, Clone)]
pub struct ResyncSchedule {
    interval_ms: i64,
    last_probe: Option<i64>,
}

impl ResyncSchedule {
    pub fn new(interval_ms: i64) -> Self {
        assert!(interval_ms > 0, "sync interval must be positive");
        ResyncSchedule {
            interval_ms,
            last_probe: None,
        }
    }

    pub fn due(&self, now_local: i64) -> bool {
        match self.last_probe {
            None => true,
            Some(last) => now_local >= next_probe_time(last, self.interval_ms),
        }
    }

    pub fn mark(&mut self, probed_at_local: i64) {
        self.last_probe = Some(probed_at_local);
    }

    pub fn next_due(&self) -> Option<i64> {
        self.last_probe.map(|l| next_probe_time(l, self.interval_ms))
    }
}

pub fn resolve(addr: &str) -> Result<SocketAddr, TimeSyncError> {
    addr.to_socket_addrs()
        .ok()
        .and_then(|mut it| it.next())
        .ok_or_else(|| TimeSyncError::Resolve(addr.to_string()))
}

/// One `TIME` exchange.
pub fn probe_once(addr: &str, clock: &LocalClock, timeout: Duration) -> Result<TimeProbe, TimeSyncError> {
    let sock = resolve(addr)?;
    let send_local = clock.now_ms();
    let mut stream = TcpStream::connect_timeout(&sock, timeout)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(timeout))?;
    stream.write_all(b"TIME\n")?;
    let mut line = String::new();
    BufReader::new(&stream).read_line(&mut line)?;
    let recv_local = clock.now_ms();
    let server_time = line
        .trim_end()
        .strip_prefix("TIME ")
        .and_then(|v| v.parse::<i64>().ok())
        .ok_or_else(|| TimeSyncError::Protocol(format!("unexpected reply {line:?}")))?;
    Ok(TimeProbe {
        send_local,
        server_time,
        recv_local,
    })
}

/// Takes `count` probes and estimates an offset from the ones that succeeded.
pub fn synchronize(
    addr: &str,
    clock: &LocalClock,
    tester_id: u32,
    count: usize,
    timeout: Duration,
) -> Result<ClockOffset, TimeSyncError> {
    let mut probes = Vec::with_capacity(count);
    let mut last_err = None;
    for _ in 0..count {
        match probe_once(addr, clock, timeout) {
            Ok(p) => probes.push(p),
            Err(e) => {
                debug!(%addr, error = %e, "time probe failed");
                last_err = Some(e);
            }
        }
    }
    if probes.is_empty() {
        return Err(last_err.unwrap_or(TimeSyncError::NoProbes));
    }
    estimate_offset(tester_id, &probes)
}

/// Line-oriented time-stamp server: `TIME\n` is answered with
/// `TIME <server_ms>\n`, then the connection closes.
pub struct TimeServer {
    listener: TcpListener,
    clock: LocalClock,
}

impl TimeServer {
    pub fn bind(addr: &str) -> io::Result<Self> {
        Self::bind_with_clock(addr, LocalClock::system())
    }

    pub fn bind_with_clock(addr: &str, clock: LocalClock) -> io::Result<Self> {
        Ok(TimeServer {
            listener: TcpListener::bind(addr)?,
            clock,
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// The server's current clock reading.
    pub fn serve_time(&self) -> i64 {
        self.clock.now_ms()
    }

    /// Runs the accept loop on a background thread.
    pub fn spawn(self) -> io::Result<TimeServerHandle> {
        let addr = self.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let served = Arc::new(AtomicU64::new(0));
        let thread = {
            let stop = stop.clone();
            let served = served.clone();
            thread::spawn(move || self.accept_loop(&stop, &served))
        };
        Ok(TimeServerHandle {
            addr,
            stop,
            served,
            thread: Some(thread),
        })
    }

    /// Serves until the process exits.
    pub fn run(self) -> io::Result<()> {
        let stop = AtomicBool::new(false);
        let served = Arc::new(AtomicU64::new(0));
        self.accept_loop(&stop, &served);
        Ok(())
    }

    fn accept_loop(&self, stop: &AtomicBool, served: &Arc<AtomicU64>) {
        for conn in self.listener.incoming() {
            if stop.load(Ordering::SeqCst) {
                break;
            }
            let stream = match conn {
                Ok(s) => s,
                Err(e) => {
                    warn!(error = %e, "time server accept failed");
                    continue;
                }
            };
            let clock = self.clock.clone();
            let served = served.clone();
            thread::spawn(move || {
                if handle_probe(stream, &clock).unwrap_or(false) {
                    served.fetch_add(1, Ordering::Relaxed);
                }
            });
        }
    }
}

fn handle_probe(stream: TcpStream, clock: &LocalClock) -> io::Result<bool> {
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(Duration::from_secs(5)))?;
    let mut line = String::new();
    BufReader::new(&stream).read_line(&mut line)?;
    if line.trim_end() != "TIME" {
        return Ok(false);
    }
    let reply = format!("TIME {}\n", clock.now_ms());
    (&stream).write_all(reply.as_bytes())?;
    let _ = stream.shutdown(Shutdown::Both);
    Ok(true)
}

pub struct TimeServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    served: Arc<AtomicU64>,
    thread: Option<JoinHandle<()>>,
}

impl TimeServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn served(&self) -> u64 {
        self.served.load(Ordering::Relaxed)
    }

    pub fn shutdown(mut self) {
        self.stop_inner();
    }

    fn stop_inner(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_millis(500));
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for TimeServerHandle {
    fn drop(&mut self) {
        self.stop_inner();
    }
}
