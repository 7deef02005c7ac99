use std::fs;
use std::io::{self, Write};
use std::net::TcpStream;
use std::path::PathBuf;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use crate::analysis::{LatencyLegs, RecordFile};
use crate::controller::{run_experiment, ExperimentPlan, LiveOutput};
use crate::mock::{self, HttpTarget, MockService, QueueLimit, ServiceModel, ServiceTime};
use crate::model::TestDescription;
use crate::report::{build_report, AnalyzeOptions};
use crate::tester::{run_agent, run_standalone, AgentExit, AgentOptions, SessionEnd, SessionOptions};
use crate::timesync::{LocalClock, TimeServer};
use crate::transport::{parse_nodes, ControlChannel, LineReceiver, LineSender, TransportConfig};

#[derive(Debug, Parser)]
#[command(name = "diperf", version, about = "Distributed performance testing of network services")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Serve the reference clock.
    Timeserver {
        #[arg(long, default_value = "0.0.0.0:7001")]
        listen: String,
    },
    /// Run a tester agent.
    Tester(TesterArgs),
    /// Run an experiment across a set of tester nodes.
    Controller(ControllerArgs),
    /// Run the built-in queueing service.
    MockService(MockServiceArgs),
    /// One request against the built-in queueing service.
    MockClient {
        #[arg(long)]
        target: String,
    },
    /// Fixed-delay HTTP endpoint.
    MockHttp {
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: String,
        #[arg(long, default_value_t = 4)]
        workers: usize,
        #[arg(long, default_value_t = 100)]
        delay_ms: u64,
    },
    /// One HTTP GET; exit status 0 on a 2xx reply.
    HttpGet {
        url: String,
        /// Seconds.
        #[arg(long, default_value_t = 30.0)]
        timeout: f64,
    },
    /// Compute metrics and a report bundle from a record file.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
struct TesterArgs {
    /// Control channel on stdin/stdout.
    #[arg(long, conflicts_with_all = ["controller", "desc"])]
    stdio: bool,
    /// Connect to a controller at host:port.
    #[arg(long)]
    controller: Option<String>,
    /// Run without a controller from a JSON test description.
    #[arg(long, requires = "out")]
    desc: Option<PathBuf>,
    /// Record file for --desc mode.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    id: u32,
    #[arg(long, default_value_t = 15_000)]
    heartbeat_ms: u64,
    /// Time this many runs of the client against a local echo server first.
    #[arg(long)]
    calibrate: Option<u32>,
    /// Offset the local clock, to imitate a badly synchronized node.
    #[arg(long, hide = true, default_value_t = 0, allow_hyphen_values = true)]
    clock_skew_ms: i64,
}

#[derive(Debug, Args)]
struct ControllerArgs {
    /// Nodes file: one `node_id address backend` per line.
    #[arg(long)]
    targets: PathBuf,
    /// Client executable to stage on every node.
    #[arg(long)]
    client: PathBuf,
    /// Arguments to the client; `{target}` becomes the service address.
    #[arg(long, default_value = "{target}", allow_hyphen_values = true)]
    client_args: String,
    #[arg(long)]
    target_service: String,
    #[arg(long)]
    timeserver: String,
    /// Seconds between tester launches.
    #[arg(long, default_value_t = 25.0)]
    ramp: f64,
    /// Seconds each tester runs.
    #[arg(long, default_value_t = 3600.0)]
    duration: f64,
    /// Seconds between client starts.
    #[arg(long, default_value_t = 1.0)]
    interval: f64,
    /// Seconds between clock resynchronizations.
    #[arg(long, default_value_t = 300.0)]
    sync: f64,
    /// Seconds before a client is killed.
    #[arg(long, default_value_t = 120.0)]
    timeout: f64,
    /// Cap on client starts per second per tester.
    #[arg(long)]
    max_rate: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    /// Seconds between controller pings.
    #[arg(long, default_value_t = 15.0)]
    heartbeat: f64,
    /// Drop a tester after this many consecutive failed invocations.
    #[arg(long)]
    max_client_failures: Option<u32>,
    #[arg(long)]
    calibrate: Option<u32>,
    /// Root of the staging directories of `localhost` nodes.
    #[arg(long)]
    staging_dir: Option<PathBuf>,
    /// Print live CSV snapshots every this many seconds.
    #[arg(long)]
    live_quantum: Option<u64>,
    /// Tester executable for local nodes; defaults to this binary.
    #[arg(long)]
    tester_program: Option<PathBuf>,
    /// Seconds allowed for the node availability probe.
    #[arg(long, default_value_t = 10.0)]
    probe_timeout: f64,
}

#[derive(Debug, Args)]
struct MockServiceArgs {
    #[arg(long, default_value = "127.0.0.1:7002")]
    listen: String,
    #[arg(long, default_value_t = 1)]
    slots: usize,
    #[arg(long, default_value_t = 700)]
    service_ms: u64,
    /// `unbounded` or the number of requests allowed to wait.
    #[arg(long, default_value = "unbounded")]
    queue: QueueLimit,
    /// Exponentially distributed service times with the given mean.
    #[arg(long)]
    exponential: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Block new service starts for this long after each rejection.
    #[arg(long, default_value_t = 0)]
    stall_ms: u64,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[arg(long)]
    records: PathBuf,
    #[arg(long, default_value_t = 60)]
    quantum_throughput: i64,
    #[arg(long, default_value_t = 1)]
    quantum_load: i64,
    #[arg(long, default_value_t = 60)]
    quantum_response: i64,
    #[arg(long, default_value_t = 160)]
    ma_window: i64,
    #[arg(long, default_value_t = 6)]
    poly_degree: usize,
    /// Network legs subtracted from response times: 2 (request and reply) or 1.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=2))]
    latency_legs: u8,
    #[arg(long)]
    out_dir: PathBuf,
}

fn init_logging() {
    let filter = EnvFilter::try_from_env("DIPERF_LOG").unwrap_or_else(|_| EnvFilter::new("warn"));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(io::stderr)
        .try_init();
}

fn secs(s: f64, name: &str) -> Result<Duration> {
    Duration::try_from_secs_f64(s).with_context(|| format!("--{name} must be a non-negative number of seconds"))
}

/// Parses arguments, runs the subcommand and returns the process exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    init_logging();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn announce(what: &str, addr: impl std::fmt::Display) {
    // tests and scripts bind port 0 and read the address from here
    println!("{what} listening on {addr}");
    let _ = io::stdout().flush();
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Timeserver { listen } => {
            let server = TimeServer::bind(&listen).with_context(|| format!("binding {listen}"))?;
            announce("timeserver", server.local_addr()?);
            server.run()?;
            Ok(0)
        }
        Command::Tester(args) => run_tester(args),
        Command::Controller(args) => run_controller(args),
        Command::MockService(args) => {
            let mut model = ServiceModel::fifo(args.slots, args.service_ms, args.queue);
            model.overload_stall_ms = args.stall_ms;
            if args.exponential {
                model.service_time = ServiceTime::Exponential { seed: args.seed };
            }
            let service = MockService::bind(&args.listen, model)?;
            announce("mock-service", service.local_addr()?);
            service.run();
            Ok(0)
        }
        Command::MockClient { target } => Ok(mock::mock_client(&target)),
        Command::MockHttp { listen, workers, delay_ms } => {
            let http = HttpTarget::spawn(&listen, workers, Duration::from_millis(delay_ms))?;
            announce("mock-http", http.addr());
            http.wait();
            Ok(0)
        }
        Command::HttpGet { url, timeout } => Ok(mock::http_get(&url, secs(timeout, "timeout")?)),
        Command::Analyze(args) => {
            let file = RecordFile::load(&args.records).with_context(|| format!("reading {}", args.records.display()))?;
            let options = AnalyzeOptions {
                quantum_throughput: args.quantum_throughput,
                quantum_load: args.quantum_load,
                quantum_response: args.quantum_response,
                ma_window: args.ma_window,
                poly_degree: args.poly_degree,
                legs: if args.latency_legs == 1 { LatencyLegs::One } else { LatencyLegs::Both },
                peak_window: None,
            };
            for (name, q) in [
                ("quantum-throughput", options.quantum_throughput),
                ("quantum-load", options.quantum_load),
                ("quantum-response", options.quantum_response),
            ] {
                if q <= 0 {
                    bail!("--{name} must be > 0");
                }
            }
            let bundle = build_report(&file, &options)?;
            bundle
                .write_to(&args.out_dir)
                .with_context(|| format!("writing {}", args.out_dir.display()))?;
            Ok(0)
        }
    }
}

fn run_tester(args: TesterArgs) -> Result<i32> {
    let clock = LocalClock::with_skew(args.clock_skew_ms);
    if let Some(desc_path) = args.desc {
        let text = fs::read_to_string(&desc_path).with_context(|| format!("reading {}", desc_path.display()))?;
        let desc: TestDescription = serde_json::from_str(&text).context("parsing test description")?;
        let desc = desc.validate()?;
        let out_path = args.out.expect("clap requires --out with --desc");
        let out = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&out_path)
            .with_context(|| format!("opening {}", out_path.display()))?;
        let report = run_standalone(&desc, &SessionOptions::new(args.id), &clock, out);
        return Ok(match report.end {
            SessionEnd::Completed | SessionEnd::Stopped => 0,
            other => {
                eprintln!("session ended: {other:?}");
                1
            }
        });
    }
    let (sender, receiver) = if args.stdio {
        (LineSender::new(io::stdout()), LineReceiver::new(io::stdin()))
    } else if let Some(addr) = args.controller {
        let stream = TcpStream::connect(&addr).with_context(|| format!("connecting to controller {addr}"))?;
        let ch = ControlChannel::from_tcp(stream)?;
        (ch.sender, ch.receiver)
    } else {
        bail!("one of --stdio, --controller or --desc is required");
    };
    let exit = run_agent(
        sender,
        receiver,
        AgentOptions {
            tester_id: args.id,
            heartbeat: Duration::from_millis(args.heartbeat_ms.max(1)),
            calibrate: args.calibrate,
            clock,
        },
    );
    Ok(match exit {
        AgentExit::Session(SessionEnd::Completed) | AgentExit::Session(SessionEnd::Stopped) | AgentExit::StoppedBeforeStart => 0,
        AgentExit::InvalidDescription(_) | AgentExit::Session(SessionEnd::SyncFailed(_)) => 2,
        _ => 3,
    })
}

fn run_controller(args: ControllerArgs) -> Result<i32> {
    let nodes_text = fs::read_to_string(&args.targets).with_context(|| format!("reading {}", args.targets.display()))?;
    let nodes = parse_nodes(&nodes_text)?;
    let description = TestDescription {
        experiment_duration: args.duration,
        invocation_interval: args.interval,
        sync_interval: args.sync,
        client_command: args.client_args,
        target_address: args.target_service,
        timeserver_address: args.timeserver,
        client_timeout: args.timeout,
        max_invocation_rate: args.max_rate,
    };
    let mut plan = ExperimentPlan::new(description, nodes, args.client, args.out);
    plan.ramp_delay = secs(args.ramp, "ramp")?;
    plan.heartbeat = secs(args.heartbeat, "heartbeat")?;
    plan.max_client_failures = args.max_client_failures;
    plan.calibrate = args.calibrate;
    plan.probe_timeout = secs(args.probe_timeout, "probe-timeout")?;
    let mut transport = TransportConfig::default();
    if let Some(dir) = args.staging_dir {
        transport.staging_root = dir;
    }
    if let Some(p) = args.tester_program {
        transport.tester_program = p;
    }
    plan.transport = transport;
    let live = args.live_quantum.map(|q| LiveOutput {
        quantum: Duration::from_secs(q.max(1)),
        sink: Box::new(io::stdout()),
    });
    let summary = run_experiment(&plan, live)?;
    eprint!("{summary}");
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn missing_client_names_the_flag() {
        let err = Cli::try_parse_from([
            "diperf",
            "controller",
            "--targets",
            "n.txt",
            "--target-service",
            "h:1",
            "--timeserver",
            "h:2",
            "--out",
            "r.txt",
        ])
        .unwrap_err();
        assert!(err.to_string().contains("--client"), "{err}");
    }

    #[test]
    fn no_arguments_is_an_error() {
        assert!(Cli::try_parse_from(["diperf"]).is_err());
    }
}
