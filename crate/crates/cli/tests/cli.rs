use std::path::Path;
use std::process::{Command, Output};

fn heartlink(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_heartlink"))
        .args(args)
        .env_remove("HEARTLINK_RELAY")
        .env_remove("RUST_LOG")
        .output()
        .expect("run heartlink")
}

fn ok(args: &[&str]) -> Output {
    let out = heartlink(args);
    assert!(
        out.status.success(),
        "heartlink {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn wav_samples(p: &Path) -> Vec<i16> {
    let bytes = std::fs::read(p).unwrap();
    assert_eq!(&bytes[0..4], b"RIFF");
    bytes[44..]
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]))
        .collect()
}

#[test]
fn render_presets() {
    let dir = tempfile::tempdir().unwrap();
    for preset in ["sleepy", "delighted", "angry"] {
        let out = dir.path().join(format!("{preset}.wav"));
        ok(&["render", "--preset", preset, "--duration", "3", "--out", path(&out)]);
        assert_eq!(wav_samples(&out).len(), 3 * 44_100);
    }
}

#[test]
fn render_raw_to_stdout() {
    let out = ok(&[
        "render",
        "--h-bpm",
        "90",
        "--f-hz",
        "200",
        "--duration",
        "0.5",
        "--sample-rate",
        "8000",
        "--out",
        "-",
    ]);
    assert_eq!(out.stdout.len(), 4000 * 2);
}

#[test]
fn presets_listing() {
    let out = ok(&["presets"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(
        text,
        "preset,arousal_level,valence_level,h_bpm,f_hz\nsleepy,1,1,60,100\ndelighted,5,1,120,100\nangry,5,5,120,300\n"
    );
}

#[test]
fn invalid_input_is_one_line_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = heartlink(&["render", "--phi", "2", "--out", path(&dir.path().join("x.wav"))]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("heartlink: "), "{err}");

    let out = heartlink(&["render", "--out", "/nonexistent/dir/x.wav"]);
    assert!(!out.status.success());

    let out = heartlink(&["render", "--bogus"]);
    assert!(!out.status.success());
}

#[test]
fn calibrate_constant_traces() {
    let dir = tempfile::tempdir().unwrap();
    let rest = dir.path().join("rest.csv");
    let stress = dir.path().join("stress.csv");
    std::fs::write(&rest, "t_ms,hr_bpm,eda_us\n0,60,1.0\n1000,60,1.0\n2000,60,1.0\n").unwrap();
    std::fs::write(&stress, "t_ms,hr_bpm,eda_us\n0,120,8.0\n1000,120,8.0\n2000,120,8.0\n").unwrap();
    let profile = dir.path().join("me.toml");
    ok(&[
        "calibrate",
        "--rest",
        path(&rest),
        "--stress",
        path(&stress),
        "--out",
        path(&profile),
    ]);
    let p = heartlink_core::CalibrationProfile::load(&profile).unwrap();
    assert_eq!(
        (p.hr_rest, p.hr_stress, p.eda_rest, p.eda_stress),
        (60.0, 120.0, 1.0, 8.0)
    );
}

#[test]
fn calibrate_reports_bad_line() {
    let dir = tempfile::tempdir().unwrap();
    let rest = dir.path().join("rest.csv");
    std::fs::write(&rest, "t_ms,hr_bpm,eda_us\n0,60,1.0\n1000,500,1.0\n").unwrap();
    let out = heartlink(&["calibrate", "--rest", path(&rest), "--stress", path(&rest)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn offline_empty_trace() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("empty.csv");
    std::fs::write(&trace, "t_ms,hr_bpm,eda_us\n").unwrap();
    let wav = dir.path().join("out.wav");
    let frames = dir.path().join("frames.csv");
    ok(&[
        "offline",
        "--trace",
        path(&trace),
        "--out",
        path(&wav),
        "--frames",
        path(&frames),
    ]);
    assert!(wav_samples(&wav).is_empty());
    assert!(std::fs::read(&frames).unwrap().is_empty());
}

#[test]
fn offline_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.csv");
    std::fs::write(&trace, "0,60,1.0\n1000,75,2.5\n2000,110,9.0\n3000,118,9.5\n").unwrap();
    let run = |name: &str| {
        let wav = dir.path().join(format!("{name}.wav"));
        let frames = dir.path().join(format!("{name}.csv"));
        ok(&[
            "offline",
            "--trace",
            path(&trace),
            "--out",
            path(&wav),
            "--frames",
            path(&frames),
        ]);
        (std::fs::read(wav).unwrap(), std::fs::read_to_string(frames).unwrap())
    };
    let (wav1, frames1) = run("one");
    let (wav2, frames2) = run("two");
    assert_eq!(wav1, wav2);
    assert_eq!(frames1, frames2);
    assert_eq!(frames1.lines().count(), 5);
    assert!(frames1.ends_with("3000,5,5,120,300\n"), "{frames1}");
}

#[test]
fn simulate_constant_rest() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&[
        "simulate",
        "--scenario",
        "rest",
        "--duration",
        "10",
        "--time-scale",
        "20",
        "--ping-interval",
        "0.05",
        "--out",
        path(dir.path()),
    ]);
    let reports: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for player in ["a", "b"] {
        let r = &reports[player];
        assert_eq!(r["samples_sent"], 10, "{r}");
        assert_eq!(r["samples_received"], 10, "{r}");
        assert_eq!(r["level_changes"], 0, "{r}");
        assert_eq!(r["relay_dropped"], 0, "{r}");
        let frames = std::fs::read_to_string(dir.path().join(format!("frames_{player}.csv"))).unwrap();
        let rows: Vec<&str> = frames.lines().skip(1).collect();
        assert_eq!(rows.len(), 10);
        assert!(rows.iter().all(|l| l.ends_with(",1,1,60,100")), "{frames}");
        assert_eq!(
            wav_samples(&dir.path().join(format!("player_{player}.wav"))).len(),
            10 * 44_100
        );
    }
}

#[test]
fn connect_without_relay_fails_cleanly() {
    let out = heartlink(&[
        "connect",
        "--relay",
        "127.0.0.1:1",
        "--session",
        "s",
        "--player",
        "A",
        "--scenario",
        "rest",
        "--duration",
        "1",
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
}

#[test]
fn serve_and_connect_two_players() {
    use std::net::TcpListener;
    use std::process::Stdio;

    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let mut relay = Command::new(env!("CARGO_BIN_EXE_heartlink"))
        .args(["serve", "--bind", &addr])
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let deadline = std::time::Instant::now() + std::time::Duration::from_secs(10);
    while std::net::TcpStream::connect(&addr).is_err() {
        assert!(std::time::Instant::now() < deadline, "relay did not start");
        std::thread::sleep(std::time::Duration::from_millis(20));
    }
    let player = |id: &str, scenario: &str| {
        Command::new(env!("CARGO_BIN_EXE_heartlink"))
            .args(["connect", "--session", "duo", "--player", id, "--scenario", scenario])
            .args(["--duration", "4", "--time-scale", "10", "--ping-interval", "0.05"])
            .env("HEARTLINK_RELAY", &addr)
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .unwrap()
    };
    let a = player("A", "stress");
    let b = player("B", "rest");
    let a = a.wait_with_output().unwrap();
    let b = b.wait_with_output().unwrap();
    relay.kill().unwrap();
    relay.wait().unwrap();
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert!(b.status.success(), "{}", String::from_utf8_lossy(&b.stderr));
    let ra: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    let rb: serde_json::Value = serde_json::from_slice(&b.stdout).unwrap();
    assert_eq!(ra["samples_received"], 4);
    assert_eq!(rb["samples_received"], 4);
    assert_eq!(ra["partner_seen"], true);
}
