//! Node liveness probing, client code distribution and the line-oriented
//! control channel between controller and testers.
//!
//! Two interchangeable backends: `Local` spawns testers as child processes
//! of this host with pipes as the channel, `RemoteShell` shells out to the
//! system `ssh`/`scp` executables.

use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitStatus, Stdio};
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use sha2::{Digest, Sha256};
use thiserror::Error;
use tracing::{debug, warn};

use crate::model::{RecordLine, TestDescription};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("nodes file line {line}: {reason}")]
    NodesFile { line: usize, reason: String },
    #[error("duplicate node id `{0}`")]
    DuplicateNode(String),
    #[error("cannot read payload {path}: {source}")]
    Payload { path: PathBuf, source: io::Error },
    #[error("cannot open channel to {node}: {source}")]
    Connect { node: String, source: io::Error },
    #[error("malformed control line: {0:?}")]
    Protocol(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Backend {
    Local,
    RemoteShell,
}

impl FromStr for Backend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "local" => Ok(Backend::Local),
            "ssh" | "remote" | "remoteshell" => Ok(Backend::RemoteShell),
            other => Err(format!("unknown backend `{other}` (expected local or ssh)")),
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::Local => "local",
            Backend::RemoteShell => "ssh",
        })
    }
}

/// A candidate tester node.
///
/// For `Local` nodes the address is either `localhost` (staging under the
/// configured root) or an explicit staging directory path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeEndpoint {
    pub node_id: String,
    pub address: String,
    pub backend: Backend,
}

impl NodeEndpoint {
    pub fn local(node_id: impl Into<String>) -> Self {
        NodeEndpoint {
            node_id: node_id.into(),
            address: "localhost".into(),
            backend: Backend::Local,
        }
    }
}

/// Parses a nodes file: one `node_id address backend` triple per line.
/// Blank lines and `#` comments are skipped.
pub fn parse_nodes(text: &str) -> Result<Vec<NodeEndpoint>, TransportError> {
    let mut nodes: Vec<NodeEndpoint> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [node_id, address, backend] = fields[..] else {
            return Err(TransportError::NodesFile {
                line: i + 1,
                reason: format!("expected `node_id address backend`, got {line:?}"),
            });
        };
        let backend = backend
            .parse()
            .map_err(|reason| TransportError::NodesFile { line: i + 1, reason })?;
        if nodes.iter().any(|n| n.node_id == node_id) {
            return Err(TransportError::DuplicateNode(node_id.to_string()));
        }
        nodes.push(NodeEndpoint {
            node_id: node_id.to_string(),
            address: address.to_string(),
            backend,
        });
    }
    Ok(nodes)
}

#[derive(Debug, Clone)]
pub struct TransportConfig {
    /// Root for `localhost` staging directories.
    pub staging_root: PathBuf,
    pub ssh_program: String,
    pub scp_program: String,
    /// Staging root on remote nodes, relative to the login directory.
    pub remote_staging: String,
    /// Tester executable for local nodes.
    pub tester_program: PathBuf,
    /// Tester command on remote nodes.
    pub remote_tester_command: String,
}

impl Default for TransportConfig {
    fn default() -> Self {
        TransportConfig {
            staging_root: std::env::temp_dir().join("diperf-staging"),
            ssh_program: "ssh".into(),
            scp_program: "scp".into(),
            remote_staging: ".diperf".into(),
            tester_program: std::env::current_exe().unwrap_or_else(|_| PathBuf::from("diperf")),
            remote_tester_command: "diperf".into(),
        }
    }
}

impl TransportConfig {
    pub fn local_staging_dir(&self, node: &NodeEndpoint) -> PathBuf {
        match node.address.as_str() {
            "" | "localhost" | "local" => self.staging_root.join(&node.node_id),
            path => PathBuf::from(path),
        }
    }

    fn remote_staging_dir(&self, node: &NodeEndpoint) -> String {
        format!("{}/{}", self.remote_staging, node.node_id)
    }

    fn ssh(&self, node: &NodeEndpoint, connect_timeout: Option<Duration>) -> Command {
        let mut cmd = Command::new(&self.ssh_program);
        cmd.arg("-o").arg("BatchMode=yes");
        if let Some(t) = connect_timeout {
            cmd.arg("-o").arg(format!("ConnectTimeout={}", t.as_secs().max(1)));
        }
        cmd.arg(&node.address);
        cmd
    }
}

/// Runs a command to completion, killing it after `timeout`.
/// `Ok(None)` means it timed out.
pub fn run_with_timeout(cmd: &mut Command, timeout: Duration) -> io::Result<Option<ExitStatus>> {
    let mut child = cmd
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()?;
    let deadline = Instant::now() + timeout;
    loop {
        if let Some(status) = child.try_wait()? {
            return Ok(Some(status));
        }
        if Instant::now() >= deadline {
            let _ = child.kill();
            let _ = child.wait();
            return Ok(None);
        }
        thread::sleep(Duration::from_millis(5));
    }
}

fn command_output(cmd: &mut Command, timeout: Duration) -> io::Result<String> {
    let mut child = cmd
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()?;
    let mut stdout = child.stdout.take().expect("piped stdout");
    let reader = thread::spawn(move || {
        let mut s = String::new();
        let _ = stdout.read_to_string(&mut s);
        s
    });
    let deadline = Instant::now() + timeout;
    let status = loop {
        if let Some(status) = child.try_wait()? {
            break status;
        }
        if Instant::now() >= deadline {
            let _ = child.kill();
            let _ = child.wait();
            return Err(io::Error::new(io::ErrorKind::TimedOut, "remote command timed out"));
        }
        thread::sleep(Duration::from_millis(5));
    };
    let out = reader.join().unwrap_or_default();
    if status.success() {
        Ok(out)
    } else {
        Err(io::Error::other(format!("remote command failed: {status}")))
    }
}

fn probe_node(cfg: &TransportConfig, node: &NodeEndpoint, timeout: Duration) -> bool {
    let result = match node.backend {
        Backend::Local => {
            let dir = cfg.local_staging_dir(node);
            if let Err(e) = fs::create_dir_all(&dir) {
                debug!(node = %node.node_id, error = %e, "staging directory unavailable");
                return false;
            }
            run_with_timeout(Command::new("true").current_dir(&dir), timeout)
        }
        Backend::RemoteShell => run_with_timeout(cfg.ssh(node, Some(timeout)).arg("true"), timeout),
    };
    matches!(result, Ok(Some(status)) if status.success())
}

/// Returns the candidates that answered a trivial command within `timeout`,
/// in input order.
pub fn probe_availability(
    cfg: &TransportConfig,
    candidates: &[NodeEndpoint],
    timeout: Duration,
) -> Vec<NodeEndpoint> {
    let alive: Vec<bool> = thread::scope(|s| {
        let handles: Vec<_> = candidates
            .iter()
            .map(|node| s.spawn(move || probe_node(cfg, node, timeout)))
            .collect();
        handles.into_iter().map(|h| h.join().unwrap_or(false)).collect()
    });
    candidates
        .iter()
        .zip(alive)
        .filter_map(|(node, ok)| {
            if !ok {
                warn!(node = %node.node_id, "node unavailable, excluded");
            }
            ok.then(|| node.clone())
        })
        .collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StagedPayload {
    /// Path of the payload on the node.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone)]
pub struct Deployment {
    pub node: NodeEndpoint,
    pub result: Result<StagedPayload, String>,
}

#[derive(Debug, Clone)]
pub struct DeploymentReport {
    pub payload_sha256: String,
    pub entries: Vec<Deployment>,
}

impl DeploymentReport {
    pub fn succeeded(&self) -> impl Iterator<Item = (&NodeEndpoint, &StagedPayload)> {
        self.entries
            .iter()
            .filter_map(|d| d.result.as_ref().ok().map(|p| (&d.node, p)))
    }

    pub fn failed(&self) -> impl Iterator<Item = (&NodeEndpoint, &str)> {
        self.entries
            .iter()
            .filter_map(|d| d.result.as_ref().err().map(|e| (&d.node, e.as_str())))
    }
}

const COPY_TIMEOUT: Duration = Duration::from_secs(120);

fn deploy_local(cfg: &TransportConfig, node: &NodeEndpoint, payload: &Path, name: &str) -> io::Result<StagedPayload> {
    let dir = cfg.local_staging_dir(node);
    fs::create_dir_all(&dir)?;
    let dest = dir.join(name);
    // copy to a temporary name first so a running client never sees a torn file
    let tmp = dir.join(format!(".{name}.part"));
    fs::copy(payload, &tmp)?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        fs::set_permissions(&tmp, fs::Permissions::from_mode(0o755))?;
    }
    fs::rename(&tmp, &dest)?;
    let dest = fs::canonicalize(&dest)?;
    Ok(StagedPayload {
        sha256: sha256_hex(&fs::read(&dest)?),
        path: dest.to_string_lossy().into_owned(),
    })
}

fn deploy_remote(cfg: &TransportConfig, node: &NodeEndpoint, payload: &Path, name: &str) -> io::Result<StagedPayload> {
    let dir = cfg.remote_staging_dir(node);
    let dest = format!("{dir}/{name}");
    let quoted_dir = shlex::try_quote(&dir).map_err(io::Error::other)?;
    // the tester runs inside the staging directory, so report an absolute path
    let abs_dir = command_output(
        cfg.ssh(node, None).arg(format!("mkdir -p {quoted_dir} && cd {quoted_dir} && pwd")),
        COPY_TIMEOUT,
    )?;
    let abs_dir = abs_dir.trim();
    if abs_dir.is_empty() {
        return Err(io::Error::other("remote staging directory has no path"));
    }
    command_output(
        Command::new(&cfg.scp_program)
            .arg("-q")
            .arg("-B")
            .arg(payload)
            .arg(format!("{}:{}", node.address, dest)),
        COPY_TIMEOUT,
    )?;
    let quoted = shlex::try_quote(&dest).map_err(io::Error::other)?;
    command_output(cfg.ssh(node, None).arg(format!("chmod 755 {quoted}")), COPY_TIMEOUT)?;
    let sum = command_output(cfg.ssh(node, None).arg(format!("sha256sum {quoted}")), COPY_TIMEOUT)?;
    let sha256 = sum
        .split_whitespace()
        .next()
        .ok_or_else(|| io::Error::other("empty checksum output"))?
        .to_string();
    Ok(StagedPayload {
        path: format!("{abs_dir}/{name}"),
        sha256,
    })
}

/// Copies the payload into every node's staging directory. Per-node
/// failures, including checksum mismatches, are reported without aborting
/// the other nodes.
pub fn distribute_code(
    cfg: &TransportConfig,
    payload: &Path,
    nodes: &[NodeEndpoint],
) -> Result<DeploymentReport, TransportError> {
    let bytes = fs::read(payload).map_err(|source| TransportError::Payload {
        path: payload.to_path_buf(),
        source,
    })?;
    let payload_sha256 = sha256_hex(&bytes);
    let name = payload
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "client".into());
    let entries = thread::scope(|s| {
        let handles: Vec<_> = nodes
            .iter()
            .map(|node| {
                let name = name.as_str();
                let expected = payload_sha256.as_str();
                s.spawn(move || {
                    let staged = match node.backend {
                        Backend::Local => deploy_local(cfg, node, payload, name),
                        Backend::RemoteShell => deploy_remote(cfg, node, payload, name),
                    };
                    let result = match staged {
                        Ok(p) if p.sha256 == expected => Ok(p),
                        Ok(p) => Err(format!("checksum mismatch: {} != {expected}", p.sha256)),
                        Err(e) => Err(e.to_string()),
                    };
                    if let Err(e) = &result {
                        warn!(node = %node.node_id, error = %e, "code distribution failed");
                    }
                    Deployment {
                        node: node.clone(),
                        result,
                    }
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("deploy thread panicked"))
            .collect()
    });
    Ok(DeploymentReport {
        payload_sha256,
        entries,
    })
}

/// Writing half of a line channel. Cloneable; each line is written and
/// flushed under a lock so concurrent senders never interleave.
#[derive(Clone)]
pub struct LineSender {
    inner: Arc<Mutex<Box<dyn Write + Send>>>,
}

impl LineSender {
    pub fn new(w: impl Write + Send + 'static) -> Self {
        LineSender {
            inner: Arc::new(Mutex::new(Box::new(w))),
        }
    }

    pub fn send(&self, line: &str) -> io::Result<()> {
        debug_assert!(!line.contains('\n'));
        let mut buf = Vec::with_capacity(line.len() + 1);
        buf.extend_from_slice(line.as_bytes());
        buf.push(b'\n');
        let mut w = self.inner.lock().unwrap_or_else(|p| p.into_inner());
        w.write_all(&buf)?;
        w.flush()
    }
}

/// Reading half of a line channel. Only complete lines are delivered; a
/// trailing fragment at end of stream is dropped.
pub struct LineReceiver {
    inner: BufReader<Box<dyn Read + Send>>,
}

impl LineReceiver {
    pub fn new(r: impl Read + Send + 'static) -> Self {
        LineReceiver {
            inner: BufReader::new(Box::new(r)),
        }
    }

    /// `Ok(None)` once the channel is closed.
    pub fn recv(&mut self) -> io::Result<Option<String>> {
        let mut buf = Vec::new();
        let n = self.inner.read_until(b'\n', &mut buf)?;
        if n == 0 || buf.last() != Some(&b'\n') {
            return Ok(None);
        }
        buf.pop();
        if buf.last() == Some(&b'\r') {
            buf.pop();
        }
        String::from_utf8(buf)
            .map(Some)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }
}

/// A bidirectional line channel to one tester, plus the process carrying it
/// when there is one.
pub struct ControlChannel {
    pub sender: LineSender,
    pub receiver: LineReceiver,
    pub process: Option<Child>,
}

impl ControlChannel {
    pub fn from_tcp(stream: TcpStream) -> io::Result<Self> {
        stream.set_nodelay(true)?;
        let read_half = stream.try_clone()?;
        Ok(ControlChannel {
            sender: LineSender::new(stream),
            receiver: LineReceiver::new(read_half),
            process: None,
        })
    }
}

/// Launches a tester on `node` and returns the channel to it. The tester is
/// started with `tester --stdio` followed by `tester_args`.
pub fn open_control_channel(
    cfg: &TransportConfig,
    node: &NodeEndpoint,
    tester_args: &[String],
) -> Result<ControlChannel, TransportError> {
    let mut cmd = match node.backend {
        Backend::Local => {
            let mut c = Command::new(&cfg.tester_program);
            c.arg("tester").arg("--stdio").args(tester_args);
            c.current_dir(cfg.local_staging_dir(node));
            c
        }
        Backend::RemoteShell => {
            let mut words = vec![
                format!("cd {} &&", shlex::try_quote(&cfg.remote_staging_dir(node)).unwrap_or_default()),
                cfg.remote_tester_command.clone(),
                "tester".into(),
                "--stdio".into(),
            ];
            words.extend(tester_args.iter().map(|a| shlex::try_quote(a).map(|q| q.into_owned()).unwrap_or_default()));
            let mut c = cfg.ssh(node, None);
            c.arg(words.join(" "));
            c
        }
    };
    let mut child = cmd
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()
        .map_err(|source| TransportError::Connect {
            node: node.node_id.clone(),
            source,
        })?;
    let stdin = child.stdin.take().expect("piped stdin");
    let stdout = child.stdout.take().expect("piped stdout");
    Ok(ControlChannel {
        sender: LineSender::new(stdin),
        receiver: LineReceiver::new(stdout),
        process: Some(child),
    })
}

/// Controller to tester.
#[derive(Debug, Clone, PartialEq)]
pub enum ControllerMsg {
    Start(TestDescription),
    Ping,
    Stop,
}

impl ControllerMsg {
    pub fn to_line(&self) -> String {
        match self {
            ControllerMsg::Start(desc) => {
                let json = serde_json::to_vec(desc).expect("description serializes");
                format!("START {}", B64.encode(json))
            }
            ControllerMsg::Ping => "PING".into(),
            ControllerMsg::Stop => "STOP".into(),
        }
    }

    pub fn parse(line: &str) -> Result<Self, TransportError> {
        let bad = || TransportError::Protocol(line.to_string());
        match line {
            "PING" => Ok(ControllerMsg::Ping),
            "STOP" => Ok(ControllerMsg::Stop),
            _ => {
                let payload = line.strip_prefix("START ").ok_or_else(bad)?;
                let json = B64.decode(payload).map_err(|_| bad())?;
                let desc = serde_json::from_slice(&json).map_err(|_| bad())?;
                Ok(ControllerMsg::Start(desc))
            }
        }
    }
}

/// Tester to controller.
#[derive(Debug, Clone, PartialEq)]
pub enum TesterMsg {
    Ack,
    Pong,
    Rec(RecordLine),
    Bye(String),
}

impl TesterMsg {
    pub fn to_line(&self) -> String {
        match self {
            TesterMsg::Ack => "ACK".into(),
            TesterMsg::Pong => "PONG".into(),
            TesterMsg::Rec(r) => r.to_string(),
            TesterMsg::Bye(reason) => format!("BYE {}", reason.replace('\n', " ")),
        }
    }

    pub fn parse(line: &str) -> Result<Self, TransportError> {
        match line {
            "ACK" => Ok(TesterMsg::Ack),
            "PONG" => Ok(TesterMsg::Pong),
            _ if line.starts_with("REC ") => line
                .parse()
                .map(TesterMsg::Rec)
                .map_err(|_| TransportError::Protocol(line.to_string())),
            _ => match line.strip_prefix("BYE") {
                Some(rest) => Ok(TesterMsg::Bye(rest.trim_start().to_string())),
                None => Err(TransportError::Protocol(line.to_string())),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{InvocationRecord, OffsetStamp, Outcome};
    use proptest::prelude::*;
    use std::io::Cursor;

    #[test]
    fn parses_nodes_file() {
        let nodes = parse_nodes("# pool\nn1 localhost local\n\nn2 user@host ssh\n").unwrap();
        assert_eq!(nodes.len(), 2);
        assert_eq!(nodes[0], NodeEndpoint::local("n1"));
        assert_eq!(nodes[1].backend, Backend::RemoteShell);
        assert!(matches!(
            parse_nodes("a localhost local\na x local"),
            Err(TransportError::DuplicateNode(id)) if id == "a"
        ));
        assert!(matches!(
            parse_nodes("a localhost"),
            Err(TransportError::NodesFile { line: 1, .. })
        ));
        assert!(parse_nodes("a localhost ftp").is_err());
    }

    #[test]
    fn control_messages_round_trip() {
        let desc = TestDescription {
            experiment_duration: 10.0,
            invocation_interval: 1.0,
            sync_interval: 300.0,
            client_command: "/tmp/client {target}".into(),
            target_address: "127.0.0.1:1".into(),
            timeserver_address: "127.0.0.1:2".into(),
            client_timeout: 5.0,
            max_invocation_rate: Some(3.0),
        };
        for msg in [ControllerMsg::Start(desc), ControllerMsg::Ping, ControllerMsg::Stop] {
            let line = msg.to_line();
            assert!(!line.contains('\n'));
            assert_eq!(ControllerMsg::parse(&line).unwrap(), msg);
        }
        assert!(ControllerMsg::parse("START !!!").is_err());
        assert!(ControllerMsg::parse("HELLO").is_err());

        let rec = RecordLine {
            record: InvocationRecord {
                tester_id: 2,
                sequence: 1,
                start_local: 5,
                end_local: 9,
                outcome: Outcome::Timeout,
                latency_estimate: None,
                client_overhead: Some(3),
            },
            offset: Some(OffsetStamp {
                offset_ms: 12,
                uncertainty_ms: 1,
            }),
        };
        for msg in [
            TesterMsg::Ack,
            TesterMsg::Pong,
            TesterMsg::Rec(rec),
            TesterMsg::Bye("completed".into()),
        ] {
            assert_eq!(TesterMsg::parse(&msg.to_line()).unwrap(), msg);
        }
        assert_eq!(TesterMsg::parse("BYE").unwrap(), TesterMsg::Bye(String::new()));
        assert!(TesterMsg::parse("REC 1 2").is_err());
    }

    #[test]
    fn receiver_drops_trailing_fragment() {
        let mut rx = LineReceiver::new(Cursor::new(b"ACK\r\nPONG\nREC 1 1 0".to_vec()));
        assert_eq!(rx.recv().unwrap().as_deref(), Some("ACK"));
        assert_eq!(rx.recv().unwrap().as_deref(), Some("PONG"));
        assert_eq!(rx.recv().unwrap(), None);
        assert_eq!(rx.recv().unwrap(), None);
    }

    #[derive(Clone, Default)]
    struct SharedBuf(Arc<Mutex<Vec<u8>>>);

    impl Write for SharedBuf {
        fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
            // dribble bytes one at a time to provoke interleaving
            self.0.lock().unwrap().push(buf[0]);
            thread::yield_now();
            Ok(1)
        }
        fn flush(&mut self) -> io::Result<()> {
            Ok(())
        }
    }

    #[test]
    fn concurrent_senders_never_interleave() {
        let buf = SharedBuf::default();
        let tx = LineSender::new(buf.clone());
        thread::scope(|s| {
            for t in 0..8 {
                let tx = tx.clone();
                s.spawn(move || {
                    for i in 0..50 {
                        tx.send(&format!("LINE {t} {i} {}", "x".repeat(t * 3))).unwrap();
                    }
                });
            }
        });
        let text = String::from_utf8(buf.0.lock().unwrap().clone()).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 400);
        for line in lines {
            let f: Vec<_> = line.split(' ').collect();
            let t: usize = f[1].parse().unwrap();
            assert_eq!(f[3], "x".repeat(t * 3));
        }
    }

    #[test]
    fn local_staging_dir_resolution() {
        let cfg = TransportConfig {
            staging_root: PathBuf::from("/srv/stage"),
            ..TransportConfig::default()
        };
        assert_eq!(cfg.local_staging_dir(&NodeEndpoint::local("n7")), PathBuf::from("/srv/stage/n7"));
        let explicit = NodeEndpoint {
            address: "/data/n8".into(),
            ..NodeEndpoint::local("n8")
        };
        assert_eq!(cfg.local_staging_dir(&explicit), PathBuf::from("/data/n8"));
    }

    proptest! {
        #[test]
        fn receiver_reassembles_any_chunking(
            lines in prop::collection::vec("[A-Z0-9 ]{0,40}", 0..20),
            chunk in 1usize..17,
        ) {
            let mut bytes = Vec::new();
            for l in &lines {
                bytes.extend_from_slice(l.as_bytes());
                bytes.push(b'\n');
            }
            struct Chunked { data: Vec<u8>, pos: usize, chunk: usize }
            impl Read for Chunked {
                fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
                    let n = self.chunk.min(buf.len()).min(self.data.len() - self.pos);
                    buf[..n].copy_from_slice(&self.data[self.pos..self.pos + n]);
                    self.pos += n;
                    Ok(n)
                }
            }
            let mut rx = LineReceiver::new(Chunked { data: bytes, pos: 0, chunk });
            let mut got = Vec::new();
            while let Some(l) = rx.recv().unwrap() {
                got.push(l);
            }
            prop_assert_eq!(got, lines);
        }
    }
}
