//! Desk-scale target services.
//!
//! `MockService` is an m-slot FIFO server with fixed (or exponential)
//! service times and an optional bounded queue, enough to reproduce
//! saturation and overload collapse. `HttpTarget` is a fixed-delay HTTP
//! endpoint with a bounded worker pool.

use std::collections::VecDeque;
use std::io::{self, BufRead, BufReader, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, Exp};
use thiserror::Error;
use tracing::warn;

#[derive(Debug, Error)]
pub enum MockError {
    #[error("invalid service model: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("http server: {0}")]
    Http(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueueLimit {
    Unbounded,
    /// Requests waiting beyond this many are rejected.
    Bounded(usize),
}

impl FromStr for QueueLimit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("unbounded") {
            return Ok(QueueLimit::Unbounded);
        }
        s.parse()
            .map(QueueLimit::Bounded)
            .map_err(|_| format!("expected `unbounded` or a count, got `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServiceTime {
    Deterministic,
    Exponential { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServiceModel {
    /// Concurrent servers.
    pub slots: usize,
    pub base_service_ms: u64,
    pub queue: QueueLimit,
    pub service_time: ServiceTime,
    /// Every rejection blocks new service starts for this long, turning
    /// overload into a throughput collapse rather than cheap refusals.
    pub overload_stall_ms: u64,
}

impl ServiceModel {
    pub fn fifo(slots: usize, base_service_ms: u64, queue: QueueLimit) -> Self {
        ServiceModel {
            slots,
            base_service_ms,
            queue,
            service_time: ServiceTime::Deterministic,
            overload_stall_ms: 0,
        }
    }

    pub fn validate(self) -> Result<Self, MockError> {
        if self.slots == 0 {
            return Err(MockError::InvalidModel("slots must be >= 1".into()));
        }
        if self.base_service_ms == 0 {
            return Err(MockError::InvalidModel("service time must be > 0".into()));
        }
        Ok(self)
    }

    /// Long-run completions per second at full saturation.
    pub fn capacity_per_sec(&self) -> f64 {
        self.slots as f64 * 1000.0 / self.base_service_ms as f64
    }
}

#[derive(Debug, Default)]
pub struct ServiceStats {
    pub connections: AtomicU64,
    pub jobs: AtomicU64,
    pub completed: AtomicU64,
    pub rejected: AtomicU64,
}

impl ServiceStats {
    pub fn snapshot(&self) -> (u64, u64, u64) {
        (
            self.jobs.load(Ordering::SeqCst),
            self.completed.load(Ordering::SeqCst),
            self.rejected.load(Ordering::SeqCst),
        )
    }
}

struct SlotState {
    free: usize,
    waiting: VecDeque<u64>,
    next_ticket: u64,
    stalled_until: Option<Instant>,
}

/// FIFO slot accounting, serialized behind one lock.
struct Slots {
    model: ServiceModel,
    state: Mutex<SlotState>,
    wake: Condvar,
    rng: Mutex<StdRng>,
}

enum Admission {
    Admitted,
    Rejected,
}

impl Slots {
    fn new(model: ServiceModel) -> Self {
        let seed = match model.service_time {
            ServiceTime::Exponential { seed } => seed,
            ServiceTime::Deterministic => 0,
        };
        Slots {
            model,
            state: Mutex::new(SlotState {
                free: model.slots,
                waiting: VecDeque::new(),
                next_ticket: 0,
                stalled_until: None,
            }),
            wake: Condvar::new(),
            rng: Mutex::new(StdRng::seed_from_u64(seed)),
        }
    }

    fn acquire(&self) -> Admission {
        let mut st = self.state.lock().unwrap();
        let must_wait = st.free == 0 || !st.waiting.is_empty() || st.stalled_until.is_some_and(|t| Instant::now() < t);
        if must_wait {
            if let QueueLimit::Bounded(cap) = self.model.queue {
                if st.waiting.len() >= cap {
                    if self.model.overload_stall_ms > 0 {
                        let until = Instant::now() + Duration::from_millis(self.model.overload_stall_ms);
                        st.stalled_until = Some(st.stalled_until.map_or(until, |t| t.max(until)));
                    }
                    return Admission::Rejected;
                }
            }
        }
        let ticket = st.next_ticket;
        st.next_ticket += 1;
        st.waiting.push_back(ticket);
        loop {
            let stall = st.stalled_until.filter(|t| Instant::now() < *t);
            if stall.is_none() && st.free > 0 && st.waiting.front() == Some(&ticket) {
                st.waiting.pop_front();
                st.free -= 1;
                // the next in line may also fit in a free slot
                self.wake.notify_all();
                return Admission::Admitted;
            }
            st = match stall {
                Some(until) => self.wake.wait_timeout(st, until.saturating_duration_since(Instant::now())).unwrap().0,
                None => self.wake.wait(st).unwrap(),
            };
        }
    }

    fn release(&self) {
        let mut st = self.state.lock().unwrap();
        st.free += 1;
        self.wake.notify_all();
    }

    fn service_time(&self) -> Duration {
        let base = self.model.base_service_ms as f64;
        let ms = match self.model.service_time {
            ServiceTime::Deterministic => base,
            ServiceTime::Exponential { .. } => {
                let exp = Exp::new(1.0 / base).expect("positive rate");
                exp.sample(&mut *self.rng.lock().unwrap())
            }
        };
        Duration::from_secs_f64(ms / 1000.0)
    }
}

/// Wire: `JOB\n` is answered with `DONE\n` after queueing plus service, or
/// `BUSY\n` when the queue is full.
pub struct MockService {
    listener: TcpListener,
    slots: Arc<Slots>,
    stats: Arc<ServiceStats>,
}

impl MockService {
    pub fn bind(addr: &str, model: ServiceModel) -> Result<Self, MockError> {
        let model = model.validate()?;
        Ok(MockService {
            listener: TcpListener::bind(addr)?,
            slots: Arc::new(Slots::new(model)),
            stats: Arc::new(ServiceStats::default()),
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub fn spawn(self) -> io::Result<MockServiceHandle> {
        let addr = self.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let stats = self.stats.clone();
        let thread = {
            let stop = stop.clone();
            thread::spawn(move || self.accept_loop(&stop))
        };
        Ok(MockServiceHandle {
            addr,
            stats,
            stop,
            thread: Some(thread),
        })
    }

    pub fn run(self) {
        self.accept_loop(&AtomicBool::new(false));
    }

    fn accept_loop(&self, stop: &AtomicBool) {
        for conn in self.listener.incoming() {
            if stop.load(Ordering::SeqCst) {
                break;
            }
            let stream = match conn {
                Ok(s) => s,
                Err(e) => {
                    warn!(error = %e, "mock service accept failed");
                    continue;
                }
            };
            self.stats.connections.fetch_add(1, Ordering::SeqCst);
            let slots = self.slots.clone();
            let stats = self.stats.clone();
            thread::spawn(move || {
                let _ = serve_job(stream, &slots, &stats);
            });
        }
    }
}

fn serve_job(stream: TcpStream, slots: &Slots, stats: &ServiceStats) -> io::Result<()> {
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(Duration::from_secs(30)))?;
    let mut line = String::new();
    BufReader::new(&stream).read_line(&mut line)?;
    if line.trim_end() != "JOB" {
        // connect-only latency probes and stray connections
        return Ok(());
    }
    stats.jobs.fetch_add(1, Ordering::SeqCst);
    match slots.acquire() {
        Admission::Rejected => {
            stats.rejected.fetch_add(1, Ordering::SeqCst);
            (&stream).write_all(b"BUSY\n")?;
        }
        Admission::Admitted => {
            thread::sleep(slots.service_time());
            slots.release();
            stats.completed.fetch_add(1, Ordering::SeqCst);
            (&stream).write_all(b"DONE\n")?;
        }
    }
    let _ = stream.shutdown(Shutdown::Write);
    Ok(())
}

pub struct MockServiceHandle {
    addr: SocketAddr,
    stats: Arc<ServiceStats>,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl MockServiceHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stats(&self) -> &ServiceStats {
        &self.stats
    }
}

impl Drop for MockServiceHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_millis(500));
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Exit status of the mock client.
pub mod exit {
    pub const DONE: i32 = 0;
    pub const PROTOCOL: i32 = 1;
    pub const BUSY: i32 = 2;
    pub const CONNECT: i32 = 3;
}

/// Sends one `JOB` and waits for the answer.
pub fn mock_client(target: &str) -> i32 {
    let Ok(addr) = crate::timesync::resolve(target) else {
        return exit::CONNECT;
    };
    let Ok(mut stream) = TcpStream::connect_timeout(&addr, Duration::from_secs(10)) else {
        return exit::CONNECT;
    };
    let _ = stream.set_nodelay(true);
    if stream.write_all(b"JOB\n").is_err() {
        return exit::CONNECT;
    }
    let mut line = String::new();
    match BufReader::new(&stream).read_line(&mut line) {
        Ok(_) => match line.trim_end() {
            "DONE" => exit::DONE,
            "BUSY" => exit::BUSY,
            _ => exit::PROTOCOL,
        },
        Err(_) => exit::PROTOCOL,
    }
}

/// Fixed-delay HTTP endpoint. `workers` requests are served at once; the
/// rest wait in the accept backlog.
pub struct HttpTarget {
    server: Arc<tiny_http::Server>,
    addr: SocketAddr,
    workers: Vec<JoinHandle<()>>,
    served: Arc<AtomicU64>,
}

impl HttpTarget {
    pub fn spawn(addr: &str, workers: usize, delay: Duration) -> Result<Self, MockError> {
        if workers == 0 {
            return Err(MockError::InvalidModel("workers must be >= 1".into()));
        }
        let server = Arc::new(tiny_http::Server::http(addr).map_err(|e| MockError::Http(e.to_string()))?);
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| MockError::Http("not an IP listener".into()))?;
        let served = Arc::new(AtomicU64::new(0));
        let workers = (0..workers)
            .map(|_| {
                let server = server.clone();
                let served = served.clone();
                thread::spawn(move || {
                    while let Ok(req) = server.recv() {
                        thread::sleep(delay);
                        let resp = tiny_http::Response::from_string("ok\n");
                        if req.respond(resp).is_ok() {
                            served.fetch_add(1, Ordering::SeqCst);
                        }
                    }
                })
            })
            .collect();
        Ok(HttpTarget {
            server,
            addr,
            workers,
            served,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn served(&self) -> u64 {
        self.served.load(Ordering::SeqCst)
    }

    pub fn wait(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for HttpTarget {
    fn drop(&mut self) {
        for _ in 0..self.workers.len() {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

/// One-shot HTTP GET; exit status 0 on a 2xx answer, 1 otherwise.
pub fn http_get(url: &str, timeout: Duration) -> i32 {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .build()
        .into();
    match agent.get(url).call() {
        Ok(mut resp) => {
            let _ = resp.body_mut().read_to_vec();
            0
        }
        Err(_) => 1,
    }
}
