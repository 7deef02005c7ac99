//! The command line as a user sees it.

mod common;

use std::fs;
use std::io::{BufRead, BufReader};
use std::process::{Command, Stdio};
use std::time::Duration;

use common::*;
use diperf::mock::{HttpTarget, MockService, QueueLimit, ServiceModel};
use tempfile::TempDir;

fn diperf() -> Command {
    Command::new(diperf_bin())
}

#[test]
fn no_arguments_prints_usage_and_fails() {
    let out = diperf().output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn missing_client_is_named() {
    let out = diperf()
        .args(["controller", "--targets", "n.txt", "--target-service", "h:1", "--timeserver", "h:2", "--out", "r.txt"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--client"));
}

#[test]
fn unreadable_nodes_file_fails_cleanly() {
    let dir = TempDir::new().unwrap();
    let client = write_script(dir.path(), "c.sh", "exit 0");
    let out = diperf()
        .arg("controller")
        .arg("--targets")
        .arg(dir.path().join("missing.txt"))
        .arg("--client")
        .arg(&client)
        .args(["--target-service", "h:1", "--timeserver", "h:2", "--out"])
        .arg(dir.path().join("r.txt"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.txt"));
}

#[test]
fn mock_client_exit_codes() {
    let mut model = ServiceModel::fifo(1, 300, QueueLimit::Bounded(0));
    model.overload_stall_ms = 0;
    let svc = MockService::bind("127.0.0.1:0", model).unwrap().spawn().unwrap();
    let target = svc.addr().to_string();
    let busy = diperf().args(["mock-client", "--target", &target]).spawn().unwrap();
    std::thread::sleep(Duration::from_millis(100));
    let second = diperf().args(["mock-client", "--target", &target]).status().unwrap();
    assert_eq!(second.code(), Some(2), "second request should be refused");
    let first = busy.wait_with_output().unwrap();
    assert_eq!(first.status.code(), Some(0));

    let dead = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().to_string();
    let status = diperf().args(["mock-client", "--target", &dead]).status().unwrap();
    assert_eq!(status.code(), Some(3));
}

#[test]
fn http_get_reports_success_and_failure() {
    let http = HttpTarget::spawn("127.0.0.1:0", 1, Duration::from_millis(10)).unwrap();
    let ok = diperf().args(["http-get", &format!("http://{}/cgi", http.addr())]).status().unwrap();
    assert!(ok.success());
    let dead = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().to_string();
    let bad = diperf().args(["http-get", &format!("http://{dead}/"), "--timeout", "2"]).status().unwrap();
    assert!(!bad.success());
}

#[test]
fn servers_announce_their_address() {
    for args in [
        vec!["timeserver", "--listen", "127.0.0.1:0"],
        vec!["mock-service", "--listen", "127.0.0.1:0"],
        vec!["mock-http", "--listen", "127.0.0.1:0"],
    ] {
        let mut child = diperf().args(&args).stdout(Stdio::piped()).spawn().unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        child.kill().unwrap();
        child.wait().unwrap();
        assert!(line.contains("listening on 127.0.0.1:"), "{args:?}: {line}");
    }
}

#[test]
fn analyze_writes_the_bundle() {
    let dir = TempDir::new().unwrap();
    let mut text = String::new();
    for i in 0..400i64 {
        let tester = (i % 4) + 1;
        let start = 1_000_000 + i * 900;
        text.push_str(&format!(
            "REC {tester} {} {start} {} OK 2 10 OFF 5000 3\n",
            i / 4 + 1,
            start + 700
        ));
    }
    text.push_str("REC 2 999 1295000 1295500 TIMEOUT - - OFF 5000 3\n");
    text.push_str("FAIL 4 1350000 disconnect\n");
    let records = dir.path().join("records.txt");
    fs::write(&records, text).unwrap();
    let out_dir = dir.path().join("report");
    let out = diperf()
        .arg("analyze")
        .arg("--records")
        .arg(&records)
        .arg("--out-dir")
        .arg(&out_dir)
        .args(["--quantum-throughput", "10", "--poly-degree", "3", "--latency-legs", "1"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in [
        "throughput.csv",
        "load.csv",
        "response.csv",
        "throughput_ma.csv",
        "response_ma.csv",
        "client_stats.csv",
        "bubble.csv",
        "fit.txt",
        "figure_series.dat",
        "figure_clients.dat",
        "summary.txt",
    ] {
        assert!(out_dir.join(name).is_file(), "missing {name}");
    }
    let stats = fs::read_to_string(out_dir.join("client_stats.csv")).unwrap();
    assert_eq!(stats.lines().count(), 5, "{stats}");
    let summary = fs::read_to_string(out_dir.join("summary.txt")).unwrap();
    assert!(summary.contains("TIMEOUT"), "{summary}");

    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "REC 1 x\n").unwrap();
    let out = diperf().arg("analyze").arg("--records").arg(&bad).arg("--out-dir").arg(dir.path().join("r2")).output().unwrap();
    assert!(!out.status.success());
}
