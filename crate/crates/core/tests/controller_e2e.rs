//! Short controller runs on local nodes.

mod common;

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use common::*;
use diperf::analysis::{LatencyLegs, RecordFile};
use diperf::controller::{run_experiment, ExperimentPlan, LiveOutput, LiveSnapshot, TesterState};
use diperf::mock::{MockService, QueueLimit, ServiceModel};
use diperf::model::{Outcome, TestDescription};
use diperf::timesync::TimeServer;
use diperf::transport::TransportConfig;
use tempfile::TempDir;

#[derive(Clone, Default)]
struct Shared(Arc<Mutex<Vec<u8>>>);

impl Write for Shared {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

fn plan(dir: &Path, testers: usize, duration: f64, target: &str, ts: &str, payload: std::path::PathBuf) -> ExperimentPlan {
    let desc = TestDescription {
        experiment_duration: duration,
        invocation_interval: 0.25,
        sync_interval: 2.0,
        client_command: "{target}".into(),
        target_address: target.into(),
        timeserver_address: ts.into(),
        client_timeout: 10.0,
        max_invocation_rate: None,
    };
    let mut plan = ExperimentPlan::new(desc, local_nodes(testers), payload, dir.join("records.txt"));
    plan.transport = TransportConfig {
        staging_root: dir.join("staging"),
        tester_program: diperf_bin(),
        ..TransportConfig::default()
    };
    plan.heartbeat = Duration::from_secs(1);
    plan
}

#[test]
fn ramp_spacing_and_complete_persistence() {
    let dir = TempDir::new().unwrap();
    let ts = TimeServer::bind("127.0.0.1:0").unwrap().spawn().unwrap();
    let svc = MockService::bind("127.0.0.1:0", ServiceModel::fifo(2, 50, QueueLimit::Unbounded))
        .unwrap()
        .spawn()
        .unwrap();
    let mut plan = plan(
        dir.path(),
        3,
        5.0,
        &svc.addr().to_string(),
        &ts.addr().to_string(),
        mock_client_payload(dir.path()),
    );
    plan.ramp_delay = Duration::from_secs(2);
    let live = Shared::default();
    let summary = run_experiment(
        &plan,
        Some(LiveOutput {
            quantum: Duration::from_secs(1),
            sink: Box::new(live.clone()),
        }),
    )
    .unwrap();

    let launched: Vec<i64> = summary.testers.iter().map(|t| t.launched_ms).collect();
    for w in launched.windows(2) {
        assert!((1900..=2300).contains(&(w[1] - w[0])), "launches {launched:?}");
    }
    assert!(summary.testers.iter().all(|t| t.state == TesterState::Finished));
    assert!(summary.failures.is_empty());
    // planned span is 2 * 2 s + 5 s
    let span = summary.span();
    assert!(span >= Duration::from_secs(9) && span < Duration::from_secs(13), "{span:?}");

    let file = RecordFile::load(&plan.output_path).unwrap();
    assert_eq!(file.lines.len() as u64, summary.total_records());
    let mut seqs: BTreeMap<u32, Vec<u64>> = BTreeMap::new();
    for l in &file.lines {
        seqs.entry(l.record.tester_id).or_default().push(l.record.sequence);
        assert_eq!(l.record.outcome, Outcome::Success);
    }
    for t in &summary.testers {
        let mut s = seqs.remove(&t.tester_id).unwrap_or_default();
        s.sort_unstable();
        assert_eq!(s, (1..=t.records).collect::<Vec<_>>(), "tester {}", t.tester_id);
    }
    assert!(seqs.is_empty());

    // resyncs every 2 s show up as repeated offset stamps
    let history = file.offset_history();
    assert!(history.values().all(|h| !h.is_empty()));
    let norm = file.normalize(LatencyLegs::Both);
    for t in &summary.testers {
        let first = norm.records.iter().filter(|r| r.tester_id == t.tester_id).map(|r| r.start_global).min().unwrap();
        assert!(first >= t.launched_ms - 50, "tester {} recorded before launch", t.tester_id);
    }

    let live = String::from_utf8(live.0.lock().unwrap().clone()).unwrap();
    let mut rows = live.lines();
    assert_eq!(rows.next(), Some(LiveSnapshot::CSV_HEADER));
    let rows: Vec<&str> = rows.collect();
    assert!(rows.len() >= 5, "{live}");
    assert!(rows.iter().any(|r| r.split(',').nth(1).is_some_and(|v| v.parse::<f64>().unwrap() > 0.0)));
}

#[test]
fn failing_clients_get_the_tester_dropped() {
    let dir = TempDir::new().unwrap();
    let ts = TimeServer::bind("127.0.0.1:0").unwrap().spawn().unwrap();
    let addr = ts.addr().to_string();
    let payload = write_script(dir.path(), "fail.sh", "exit 1");
    let mut plan = plan(dir.path(), 2, 30.0, &addr, &addr, payload);
    plan.max_client_failures = Some(3);
    let summary = run_experiment(&plan, None).unwrap();
    assert!(summary.span() < Duration::from_secs(15), "{:?}", summary.span());
    assert_eq!(summary.failures.len(), 2);
    for t in &summary.testers {
        assert!(matches!(&t.state, TesterState::Failed { reason, .. } if reason.contains("client failures")), "{:?}", t.state);
        assert_eq!(t.records, 3);
    }
    let file = RecordFile::load(&plan.output_path).unwrap();
    assert_eq!(file.failures.len(), 2);
    assert_eq!(file.lines.len(), 6);
    assert!(file.lines.iter().all(|l| l.record.outcome == Outcome::ServiceError));
}

#[test]
fn invalid_plans_are_rejected_before_launch() {
    let dir = TempDir::new().unwrap();
    let mut p = plan(dir.path(), 1, 5.0, "h:1", "h:2", dir.path().join("x"));
    p.heartbeat = Duration::ZERO;
    assert!(run_experiment(&p, None).is_err());
    let mut p = plan(dir.path(), 1, 5.0, "h:1", "h:2", dir.path().join("x"));
    p.description.client_timeout = 0.0;
    assert!(run_experiment(&p, None).is_err());
    let mut p = plan(dir.path(), 1, 5.0, "h:1", "h:2", dir.path().join("x"));
    p.candidates.clear();
    assert!(run_experiment(&p, None).is_err());
    assert!(!dir.path().join("records.txt").exists());
}
