mod common;

use std::io::Write;
use std::process::Stdio;
use std::time::Instant;

use common::*;

#[test]
fn loopback_file_pair_exits_zero_with_matching_digests() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let data = payload(1 << 20, 1);
    let src = write_temp(dir.path(), "one.bin", &data);
    let out = dir.path().join("got.bin");
    let port = free_port();

    let recv = spawn_recv(port, &["--out", out.to_str().unwrap()]);
    let sent = send(&src, port, &[]);
    let got = recv.wait_with_output().unwrap();

    assert_eq!(
        sent.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&sent.stderr)
    );
    assert_eq!(
        got.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&got.stderr)
    );
    let s = json(&sent.stdout);
    let r = json(&got.stdout);
    let want = sha256_hex(&data);
    assert_eq!(s["digest"], want.as_str());
    assert_eq!(r["digest"], want.as_str());
    assert_eq!(r["transfer"]["digest_ok"], true);
    assert_eq!(r["path"], "one.bin");
    assert_eq!(s["role"], "sender");
    assert_eq!(r["role"], "receiver");
    assert_eq!(s["schema_version"], 1);
    assert!(s["transfer"]["goodput_bps"].as_f64().unwrap() > 0.0);
    assert_eq!(std::fs::read(&out).unwrap(), data);
    assert!(!dir.path().join("got.bin.part").exists());
}

#[test]
fn receiver_names_output_after_the_sender_path() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let inbox = tempfile::tempdir().unwrap();
    let data = payload(70_000, 2);
    let src = write_temp(dir.path(), "named.dat", &data);
    let port = free_port();

    let recv = spawn_recv(port, &["--dir", inbox.path().to_str().unwrap()]);
    assert_eq!(send(&src, port, &[]).status.code(), Some(0));
    assert_eq!(recv.wait_with_output().unwrap().status.code(), Some(0));
    assert_eq!(std::fs::read(inbox.path().join("named.dat")).unwrap(), data);
}

#[test]
fn empty_file_produces_empty_output() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let src = write_temp(dir.path(), "empty", &[]);
    let out = dir.path().join("empty.out");
    let port = free_port();

    let recv = spawn_recv(port, &["--out", out.to_str().unwrap()]);
    assert_eq!(send(&src, port, &[]).status.code(), Some(0));
    let got = recv.wait_with_output().unwrap();
    assert_eq!(got.status.code(), Some(0));
    assert_eq!(json(&got.stdout)["transfer"]["digest_ok"], true);
    assert_eq!(std::fs::read(&out).unwrap(), Vec::<u8>::new());
}

#[test]
fn get_request_fetches_from_a_serving_sender() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let data = payload(300_000, 3);
    let src = write_temp(dir.path(), "served.bin", &data);
    let out = dir.path().join("fetched.bin");
    let port = free_port();

    let server = cmd()
        .arg("send")
        .arg(&src)
        .args([
            "--serve",
            "--bind",
            "127.0.0.1",
            "--port",
            &port.to_string(),
        ])
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let got = cmd()
        .args(["recv", "--bind", "127.0.0.1", "--port", "0"])
        .args([
            "--from",
            &format!("127.0.0.1:{port}"),
            "--path",
            "served.bin",
        ])
        .args(["--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    let served = server.wait_with_output().unwrap();
    assert_eq!(
        got.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&got.stderr)
    );
    assert_eq!(served.status.code(), Some(0));
    assert_eq!(std::fs::read(&out).unwrap(), data);
}

#[test]
fn stream_from_stdin_arrives_in_order_on_stdout() {
    let _g = serial();
    let data = payload(400_000, 4);
    let port = free_port();

    let recv = spawn_recv(port, &["--out", "-"]);
    // drain the receiver while sending so its stdout pipe never fills
    let recv = std::thread::spawn(move || recv.wait_with_output().unwrap());
    let mut sender = cmd()
        .args([
            "send",
            "-",
            &format!("127.0.0.1:{port}"),
            "--mode",
            "stream",
        ])
        .args(["--bind", "127.0.0.1"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    {
        let mut stdin = sender.stdin.take().unwrap();
        for chunk in data.chunks(10_000) {
            stdin.write_all(chunk).unwrap();
        }
    }
    let sent = sender.wait_with_output().unwrap();
    let got = recv.join().unwrap();
    assert_eq!(
        sent.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&sent.stderr)
    );
    assert_eq!(
        got.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&got.stderr)
    );
    assert_eq!(got.stdout.len(), data.len());
    assert!(got.stdout == data);
    // the report moves to stderr when stdout carries data
    let r = json(&got.stderr);
    assert_eq!(r["mode"], "stream");
    assert_eq!(r["transfer"]["gap_bytes"], 0);
}

#[test]
fn corrupted_transfer_exits_two_and_leaves_no_file() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let src = write_temp(dir.path(), "c.bin", &payload(50_000, 5));
    let out = dir.path().join("c.out");
    let port = free_port();

    let recv = spawn_recv(port, &["--out", out.to_str().unwrap()]);
    let sent = send(&src, port, &["--corrupt-digest", "--max-idle-ms", "1500"]);
    let got = recv.wait_with_output().unwrap();
    assert_eq!(got.status.code(), Some(2));
    let r = json(&got.stdout);
    assert_eq!(r["ok"], false);
    assert_eq!(r["error_kind"], "digest_mismatch");
    assert_eq!(r["transfer"]["digest_ok"], false);
    assert_eq!(sent.status.code(), Some(2));
    assert!(!out.exists());
    assert!(!dir.path().join("c.out.part").exists());
}

#[test]
fn unreachable_peer_fails_after_max_idle() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let src = write_temp(dir.path(), "u.bin", &payload(10_000, 6));
    let t = Instant::now();
    let sent = send(&src, free_port(), &["--max-idle-ms", "800"]);
    assert_eq!(sent.status.code(), Some(2));
    assert_eq!(json(&sent.stdout)["error_kind"], "idle_timeout");
    assert!(t.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn receiver_without_a_peer_gives_up() {
    let got = cmd()
        .args([
            "recv",
            "--bind",
            "127.0.0.1",
            "--port",
            "0",
            "--wait-ms",
            "300",
        ])
        .output()
        .unwrap();
    assert_eq!(got.status.code(), Some(2));
    assert_eq!(json(&got.stdout)["error_kind"], "no_peer");
}

#[test]
fn fixed_pacer_holds_its_rate_on_the_wire() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let src = write_temp(dir.path(), "p.bin", &payload(512 * 1024, 7));
    let log = dir.path().join("packets.csv");
    let port = free_port();

    let recv = spawn_recv(port, &["--out", dir.path().join("p.out").to_str().unwrap()]);
    let sent = send(
        &src,
        port,
        &[
            "--pacer",
            "fixed:1000000",
            "--packet-log",
            log.to_str().unwrap(),
        ],
    );
    assert_eq!(recv.wait_with_output().unwrap().status.code(), Some(0));
    assert_eq!(sent.status.code(), Some(0));
    assert_eq!(json(&sent.stdout)["pacer"], "fixed:1000000");

    let text = std::fs::read_to_string(&log).unwrap();
    let mut rows = text.lines();
    assert_eq!(rows.next(), Some("t_ns,bytes"));
    let rows: Vec<(u64, u64)> = rows
        .map(|l| {
            let (t, b) = l.split_once(',').unwrap();
            (t.parse().unwrap(), b.parse().unwrap())
        })
        .collect();
    let span_s = (rows.last().unwrap().0 - rows[0].0) as f64 / 1e9;
    let bits: u64 = rows.iter().map(|r| r.1 * 8).sum();
    let rate = bits as f64 / span_s;
    assert!((rate / 1e6 - 1.0).abs() <= 0.10, "measured {rate} bit/s");
}

#[test]
fn usage_and_config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cases: Vec<Vec<String>> = vec![
        vec!["recv".into(), "--no-such-flag".into()],
        vec![
            "send".into(),
            dir.path().join("missing").display().to_string(),
            "127.0.0.1:9".into(),
        ],
        vec![
            "send".into(),
            dir.path().display().to_string(),
            "127.0.0.1:9".into(),
        ],
        vec!["send".into(), "x".into()],
        vec!["recv".into(), "--pacer".into(), "warp".into()],
        vec!["recv".into(), "--payload".into(), "0".into()],
        vec!["recv".into(), "--status-interval-ms".into(), "0".into()],
        vec!["bench".into(), "--loss".into(), "1.5".into()],
        vec!["bench".into(), "--delay".into(), "-1".into()],
        vec!["bench".into(), "--rate".into(), "0".into()],
        vec!["bench".into(), "--duration".into(), "0".into()],
        vec![
            "recv".into(),
            "--dir".into(),
            dir.path().join("nope").display().to_string(),
        ],
        vec![
            "recv".into(),
            "-o".into(),
            dir.path().join("nope/x").display().to_string(),
        ],
        vec![],
    ];
    for args in cases {
        let o = cmd().args(&args).output().unwrap();
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        assert!(!o.stderr.is_empty(), "{args:?}");
    }
    let help = cmd().arg("--help").output().unwrap();
    assert_eq!(help.status.code(), Some(0));
}

#[test]
fn bind_failure_exits_one() {
    let held = std::net::UdpSocket::bind("127.0.0.1:0").unwrap();
    let port = held.local_addr().unwrap().port();
    let o = cmd()
        .args(["recv", "--bind", "127.0.0.1", "--port", &port.to_string()])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cannot bind"));
}

#[test]
fn environment_overrides_flags() {
    let o = cmd()
        .args(["recv"])
        .env("SARATOGA_PACER", "warp")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    let o = cmd()
        .args(["recv", "--bind", "127.0.0.1", "--port", "0"])
        .env("SARATOGA_WAIT_MS", "200")
        .env("SARATOGA_PACER", "fixed:5000")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(json(&o.stdout)["pacer"], "fixed:5000");
    // flags still win over the environment
    let o = cmd()
        .args([
            "recv",
            "--bind",
            "127.0.0.1",
            "--port",
            "0",
            "--wait-ms",
            "100",
            "--pacer",
            "line",
        ])
        .env("SARATOGA_PACER", "fixed:5000")
        .output()
        .unwrap();
    assert_eq!(json(&o.stdout)["pacer"], "line");
}

fn bench(args: &[&str], out: &std::path::Path) -> (serde_json::Value, Vec<u8>, Vec<u8>) {
    let json_path = out.join("r.json");
    let csv_path = out.join("r.csv");
    let o = cmd()
        .arg("bench")
        .args(["--file-size", "131072", "--duration", "60"])
        .args(args)
        .args([
            "--output",
            json_path.to_str().unwrap(),
            "--csv",
            csv_path.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let j = std::fs::read(&json_path).unwrap();
    let c = std::fs::read(&csv_path).unwrap();
    (json(&j), j, c)
}

#[test]
fn bench_reports_are_well_formed_and_repeatable() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = [
        "--rate", "128000", "--delay", "0.25", "--loss", "0.01", "--seed", "1",
    ];
    let (r, j1, c1) = bench(&args, a.path());
    let (_, j2, c2) = bench(&args, b.path());
    assert!(j1 == j2, "json differs between runs");
    assert!(c1 == c2, "csv differs between runs");
    assert_eq!(r["schema_version"], 1);
    for k in ["saratoga_utilization", "tcp_utilization"] {
        let u = r[k].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&u), "{k}={u}");
    }
    assert_eq!(r["config"]["link"]["rate_bps"], 128000);
    let csv = String::from_utf8(c1).unwrap();
    assert!(csv.starts_with("time_s,flow,rate_bps,queue_pkts\n"));
}

#[test]
fn lossless_bench_fills_the_link() {
    let d = tempfile::tempdir().unwrap();
    let (r, _, _) = bench(&["--loss", "0"], d.path());
    let u = r["saratoga_utilization"].as_f64().unwrap();
    assert!(u >= 0.95, "{u}");
}

#[test]
fn bench_prints_json_to_stdout_by_default() {
    let o = cmd()
        .args(["bench", "--file-size", "20000", "--duration", "10"])
        .env("SARATOGA_LOSS", "0")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(json(&o.stdout)["config"]["link"]["loss_prob"], 0.0);
}
