use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::process::{Child, Command, Output, Stdio};
use std::time::Duration;

use cpas_core::protocol::{encode_frame, FrameDecoder, Message};
use cpas_core::TeId;

fn cpas(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cpas")).args(args).output().unwrap()
}

fn scenario(name: &str) -> String {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "scenarios", &format!("{name}.json")].iter().collect();
    p.to_string_lossy().into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_report_replay() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    let trace = dir.path().join("t.bin");
    let o = cpas(&[
        "run",
        &scenario("baseline"),
        "--report",
        report.to_str().unwrap(),
        "--trace",
        trace.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("latency p95"));

    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(json["schema"], "cpas-report/1");
    assert_eq!(json["passed"], true);

    let o = cpas(&["report", report.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    for needle in ["latency p50", "latency p95", "reconnects", "downtime total"] {
        assert!(stdout(&o).contains(needle), "{needle}");
    }

    let o = cpas(&["replay", trace.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("identical"));

    let o = cpas(&["replay", trace.to_str().unwrap(), "--seed", "4"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--seed"));
}

#[test]
fn same_seed_gives_identical_trace_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.bin");
    let b = dir.path().join("b.bin");
    for p in [&a, &b] {
        let o = cpas(&["run", "-q", &scenario("faults"), "--seed", "17", "--trace", p.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0));
    }
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn failed_assertion_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(scenario("double_protection")).unwrap()).unwrap();
    v["te_defaults"] = serde_json::json!({ "channels": { "sms": false } });
    let p = dir.path().join("no_sms.json");
    std::fs::write(&p, v.to_string()).unwrap();
    let o = cpas(&["run", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL  double_protection"));
}

#[test]
fn bad_scenario_exits_two_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    std::fs::write(&p, "{\n  \"duration_ms\": 1000,\n  \"te_count\": -3\n}\n").unwrap();
    let o = cpas(&["run", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("te_count") && err.contains('3'), "{err}");
}

#[test]
fn bench_scheduler_reports_rate() {
    let o = cpas(&["bench-scheduler", "--tasks", "50", "--work", "20", "--scalar", "rational"]);
    assert_eq!(o.status.code(), Some(0));
    let s = stdout(&o);
    assert!(s.contains("ticks=1000 ") && s.contains("constraint_violations=0"), "{s}");
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn http(port: u16, method: &str, path: &str, body: &str) -> (u16, String) {
    let mut s = TcpStream::connect(("127.0.0.1", port)).unwrap();
    write!(
        s,
        "{method} {path} HTTP/1.1\r\nHost: x\r\nConnection: close\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut resp = String::new();
    s.read_to_string(&mut resp).unwrap();
    let status = resp[9..12].parse().unwrap();
    let body = resp.split_once("\r\n\r\n").map(|x| x.1.to_string()).unwrap_or_default();
    (status, body)
}

#[test]
fn serve_exposes_api_stream_and_te_port() {
    let (api, te) = (free_port(), free_port());
    let mut child = Command::new(env!("CARGO_BIN_EXE_cpas"))
        .args(["serve", &scenario("double_protection"), "--speed", "20"])
        .args(["--api-port", &api.to_string(), "--te-port", &te.to_string()])
        .stdin(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut banner = String::new();
    BufReader::new(child.stderr.take().unwrap()).read_line(&mut banner).unwrap();
    assert!(banner.contains("operator API"), "{banner}");
    let mut stdin = child.stdin.take().unwrap();
    let _server = Server(child);

    let mut sse = TcpStream::connect(("127.0.0.1", api)).unwrap();
    write!(sse, "GET /stream HTTP/1.1\r\nHost: x\r\nAccept: text/event-stream\r\n\r\n").unwrap();

    std::thread::sleep(Duration::from_millis(500));
    let (status, body) = http(api, "GET", "/tes", "");
    assert_eq!(status, 200);
    let tes: serde_json::Value = serde_json::from_str(&body).unwrap();
    assert_eq!(tes.as_array().unwrap().len(), 6);

    let (status, _) = http(api, "POST", "/tes/2/control", r#"{"cmd":"siren_on"}"#);
    assert_eq!(status, 202);
    assert_eq!(http(api, "GET", "/events?since=0", "").0, 200);
    assert_eq!(http(api, "POST", "/tes/2/control", r#"{"cmd":"x"}"#).0, 400);
    writeln!(stdin, "alarm 1 3 smoke").unwrap();

    sse.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
    let mut seen = String::new();
    let mut buf = [0u8; 4096];
    while !seen.contains("\"type\":\"alarm\"") {
        let n = sse.read(&mut buf).unwrap();
        assert!(n > 0, "stream closed: {seen}");
        seen.push_str(&String::from_utf8_lossy(&buf[..n]));
    }
    assert!(seen.contains("event: hmi"));

    let mut t = TcpStream::connect(("127.0.0.1", te)).unwrap();
    t.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
    t.write_all(&encode_frame(&Message::Register { fw_version: 1, zone_count: 4 }, TeId(777), 5).unwrap()).unwrap();
    let mut dec = FrameDecoder::new();
    let frame = loop {
        let n = t.read(&mut buf).unwrap();
        assert!(n > 0);
        dec.extend(&buf[..n]);
        if let Some(f) = dec.frames().pop() {
            break f;
        }
    };
    assert_eq!(frame.message, Message::RegisterAck);
    assert_eq!((frame.te_id, frame.seq), (TeId(777), 5));
    let (_, body) = http(api, "GET", "/tes/777/status", "");
    assert!(body.contains("\"online\""), "{body}");
}
