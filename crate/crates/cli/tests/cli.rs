use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use microcity::telemetry::{list_sessions, session_file, StyleMetrics, TELEMETRY_EXT};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_microcity"));
    c.env_remove("MICROCITY_DATA_DIR");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn demo_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/demo")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn run_standard(dir: &Path, preset: &str, seed: &str, duration: &str) -> PathBuf {
    let out = dir.join(format!("{preset}-{seed}"));
    let o = run(&[
        "run",
        "--standard",
        preset,
        "--seed",
        seed,
        "--duration",
        duration,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    out
}

#[test]
fn usage_errors_exit_two_and_help_exits_zero() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["run", "--help"]).status.code(), Some(0));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&[]).status.code(), Some(2));
    assert_eq!(run(&["run", "--standard", "DEFENSIVE", "--warp"]).status.code(), Some(2));
    assert_eq!(run(&["run", "--seed", "7"]).status.code(), Some(2));
    assert_eq!(run(&["compare", "only_one"]).status.code(), Some(2));
}

#[test]
fn domain_errors_exit_one_with_one_line() {
    let o = run(&["analyze", "/nonexistent/session"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr(&o).trim_end().lines().count(), 1);
    let o = run(&["run", "--standard", "RECKLESS"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn data_dir_env_is_the_default_output_root() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .env("MICROCITY_DATA_DIR", dir.path())
        .args(["run", "--standard", "AGGRESSIVE", "--duration", "2"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(list_sessions(&dir.path().join("sessions")).unwrap().len(), 1);
}

#[test]
fn replay_detects_a_single_edited_value() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_standard(dir.path(), "DEFENSIVE", "3", "10");
    let o = run(&["replay", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let id = list_sessions(&out).unwrap().remove(0);
    let csv_path = session_file(&out, &id, TELEMETRY_EXT);
    let text = std::fs::read_to_string(&csv_path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    // row 501 is tick 250 of the first vehicle; bump its x
    let mut cols: Vec<String> = lines[501].split(',').map(String::from).collect();
    let x: f64 = cols[3].parse().unwrap();
    cols[3] = format!("{:.6}", x + 0.000001);
    lines[501] = cols.join(",");
    std::fs::write(&csv_path, lines.join("\n") + "\n").unwrap();

    let o = run(&["replay", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("first mismatch at tick 250"), "{}", stderr(&o));
}

#[test]
fn analyze_prints_every_metric_of_the_demo_log() {
    let o = run(&["analyze", demo_dir().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    for field in [
        "mean_time_headway",
        "p10_time_headway",
        "red_light_entries",
        "stop_sign_violations",
        "frac_time_over_limit",
        "mean_exceedance",
        "rms_jerk",
        "rms_lane_dev",
        "mean_speed",
        "aggressiveness_index",
    ] {
        assert!(v.get(field).is_some(), "missing {field}");
    }
    let m: StyleMetrics = serde_json::from_value(v).unwrap();
    assert!(m.aggressiveness_index.is_finite());
}

#[test]
fn demo_log_is_current() {
    let o = run(&["replay", demo_dir().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn compare_and_fit() {
    let dir = tempfile::tempdir().unwrap();
    let a = run_standard(dir.path(), "DEFENSIVE", "1", "20");
    let b = run_standard(dir.path(), "AGGRESSIVE", "1", "20");
    let report = dir.path().join("report.json");
    let o = run(&["compare", a.to_str().unwrap(), b.to_str().unwrap(), "--out", report.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(v["ks_speed"].as_f64().unwrap() > 0.0);
    assert!(v["metrics"]["mean_time_headway"]["abs_diff"].as_f64().unwrap() > 0.5);

    let profile = dir.path().join("fit.json");
    let o = run(&[
        "fit",
        a.to_str().unwrap(),
        "--axis",
        "time_headway_T=0.8,1.3,1.8",
        "--out",
        profile.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let p: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&profile).unwrap()).unwrap();
    assert_eq!(p["time_headway_T"].as_f64(), Some(1.8));

    let o = run(&["fit", a.to_str().unwrap(), "--axis", "warp=1"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn gen_map_writes_a_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g.json");
    let o = run(&["gen-map", "--rows", "3", "--cols", "3", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let map = microcity::map::parse_map(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(map.nodes.len(), 9);
    assert_eq!(map.segments.len(), 12);
    assert_eq!(run(&["gen-map", "--rows", "0"]).status.code(), Some(1));
}

#[test]
fn scenario_files_in_json_and_toml() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = microcity::sim::standard_scenario(microcity::sim::ProfileSpec::Preset("DEFENSIVE".into()), 2);
    s.duration = 2.0;
    let json = dir.path().join("s.json");
    std::fs::write(&json, s.to_canonical()).unwrap();
    let toml_path = dir.path().join("s.toml");
    std::fs::write(&toml_path, toml::to_string(&s).unwrap()).unwrap();
    let mut ids = Vec::new();
    for p in [&json, &toml_path] {
        let out = dir.path().join(p.extension().unwrap());
        let o = run(&["run", "--scenario", p.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        ids.push(list_sessions(&out).unwrap().remove(0));
    }
    assert_eq!(ids[0], ids[1]);
}

#[test]
fn serve_answers_hello_and_stops_on_interrupt() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("serve.toml");
    std::fs::write(
        &config,
        format!(
            "listen = \"127.0.0.1:0\"\nstate_rate = 10.0\ndata_dir = {:?}\n[channel]\nuplink_delay_ms = 20.0\n",
            dir.path().join("sessions")
        ),
    )
    .unwrap();
    let mut child = bin()
        .args(["serve", "--config", config.to_str().unwrap(), "--ws-listen", "127.0.0.1:0"])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut err = BufReader::new(child.stderr.take().unwrap());
    let mut line = String::new();
    let addr = loop {
        line.clear();
        assert!(err.read_line(&mut line).unwrap() > 0, "serve exited early");
        if let Some(rest) = line.trim().strip_prefix("listening tcp=") {
            break rest.split_whitespace().next().unwrap().to_string();
        }
    };
    let mut sock = std::net::TcpStream::connect(&addr).unwrap();
    sock.write_all(b"{\"type\":\"hello\",\"client_kind\":\"cli-test\",\"protocol_version\":1}\n").unwrap();
    let mut reply = String::new();
    BufReader::new(sock.try_clone().unwrap()).read_line(&mut reply).unwrap();
    let v: serde_json::Value = serde_json::from_str(&reply).unwrap();
    assert_eq!(v["type"], "welcome");
    assert_eq!(v["state_rate"], 10.0);

    let status = Command::new("kill").args(["-INT", &child.id().to_string()]).status().unwrap();
    assert!(status.success());
    assert_eq!(child.wait().unwrap().code(), Some(0));
}
