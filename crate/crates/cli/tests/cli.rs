use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use roadlaw_core::dataset::{SpeedLimit, TrackFile, TrackMeta, TrackRecord};
use serde_json::Value;

fn roadlaw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_roadlaw")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = roadlaw(args);
    assert!(out.status.success(), "{args:?}\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const W: f64 = 3.75;

/// Two lanes, 60-120 km/h on the right and 80-120 km/h on the left, 10 Hz.
fn meta() -> TrackMeta {
    TrackMeta {
        frame_rate: 10.0,
        lane_lines: vec![0.0, W, 2.0 * W],
        speed_limits: vec![
            SpeedLimit { v_min: 60.0 / 3.6, v_max: 120.0 / 3.6 },
            SpeedLimit { v_min: 80.0 / 3.6, v_max: 120.0 / 3.6 },
        ],
    }
}

/// A vehicle alone in `lane` driving `speed(frame)`.
fn track(id: u64, lane: usize, x0: f64, secs: f64, speed: impl Fn(u64) -> f64) -> Vec<TrackRecord> {
    let y = (lane as f64 + 0.5) * W;
    let mut x = x0;
    (0..=(secs * 10.0) as u64)
        .map(|frame| {
            let v = speed(frame);
            if frame > 0 {
                x += 0.1 * v;
            }
            TrackRecord { frame, id, x, y, vx: v, vy: 0.0, lane_id: lane as u32 + 1, width: 1.8, length: 4.5 }
        })
        .collect()
}

fn cruise(id: u64, lane: usize, x0: f64, v: f64, secs: f64) -> Vec<TrackRecord> {
    track(id, lane, x0, secs, |_| v)
}

fn save(dir: &Path, name: &str, tracks: Vec<Vec<TrackRecord>>) -> String {
    let tf = TrackFile {
        meta: meta(),
        tracks: tracks.into_iter().map(|t| (t[0].id, t)).collect::<BTreeMap<_, _>>(),
        rejected: vec![],
    };
    let path = dir.join(name);
    tf.save(&path).unwrap();
    path.display().to_string()
}

#[test]
fn audit_of_a_compliant_file() {
    let dir = tempfile::tempdir().unwrap();
    let f = save(dir.path(), "clean.csv", vec![cruise(1, 0, 0.0, 25.0, 4.0)]);
    let out = dir.path().join("out");
    ok(&["audit", &f, "--out", out.to_str().unwrap()]);
    let s = read_json(&out.join("summary.json"));
    assert_eq!(s["stats"]["compliance_rate"], 1.0);
    assert_eq!(s["runs"], 1);
}

#[test]
fn audit_rates_match_the_hand_count() {
    // vehicle 1 is legal in the right lane. Vehicle 2 drives 25 m/s in the
    // left lane (v_min 22.2 m/s) far behind and drops to 18 m/s after 2 s.
    // At 0.05 s per frame each run has 80 frames; vehicle 2 is legal up to
    // t = 2.0 s (41 frames) and below v_min in the 39 frames after.
    let dir = tempfile::tempdir().unwrap();
    let slow = track(2, 1, 0.0, 4.0, |f| if f <= 20 { 25.0 } else { 18.0 });
    let f = save(dir.path(), "mixed.csv", vec![cruise(1, 0, 2000.0, 25.0, 4.0), slow]);
    let out = dir.path().join("out");
    ok(&["audit", &f, "--out", out.to_str().unwrap(), "--format", "csv"]);
    let s = read_json(&out.join("summary.json"));
    assert_eq!(s["stats"]["frames"], 160);
    assert_eq!(s["stats"]["counts"]["compliant"], 121);
    assert_eq!(s["stats"]["counts"]["active"], 39);
    assert_eq!(s["stats"]["compliance_rate"], 121.0 / 160.0);
    assert_eq!(s["stats"]["active_rate"], 39.0 / 160.0);
    assert_eq!(s["stats"]["law_histogram"]["a"], 39);
    let labels = std::fs::read_to_string(out.join("labels.csv")).unwrap();
    assert_eq!(labels.lines().count(), 1 + 160);
    assert_eq!(labels.lines().filter(|l| l.ends_with(",active,a")).count(), 39);
}

#[test]
fn violation_present_from_the_first_frame_is_passive() {
    // the onset lies before the recording starts
    let dir = tempfile::tempdir().unwrap();
    let f = save(dir.path(), "slow.csv", vec![cruise(1, 1, 0.0, 18.0, 4.0)]);
    let out = dir.path().join("out");
    ok(&["audit", &f, "--out", out.to_str().unwrap()]);
    let s = read_json(&out.join("summary.json"));
    assert_eq!(s["stats"]["passive_rate"], 1.0);
}

#[test]
fn audit_of_an_empty_file_fails() {
    let dir = tempfile::tempdir().unwrap();
    let f = save(dir.path(), "empty.csv", vec![]);
    let out = roadlaw(&["audit", &f, "--out", dir.path().join("out").to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no tracks"));
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        ok(&["simulate", "--builtin", "lane-change-abort", "--out", d.to_str().unwrap()]);
    }
    for name in ["frames.jsonl", "summary.json", "speed.csv", "trajectory.csv", "labels.csv"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
}

fn csv_column(path: &Path, name: &str) -> Vec<f64> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let idx = rdr.headers().unwrap().iter().position(|h| h == name).unwrap();
    rdr.records().map(|r| r.unwrap()[idx].parse().unwrap()).collect()
}

#[test]
fn speed_series_enters_the_band_and_stays() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["simulate", "--builtin", "speed-limit", "--out", dir.path().to_str().unwrap()]);
    let p = dir.path().join("speed.csv");
    let (v, lo, hi) = (csv_column(&p, "vx"), csv_column(&p, "v_min"), csv_column(&p, "v_max"));
    assert!(v[0] < lo[0]);
    let k = v.iter().zip(&lo).position(|(v, lo)| v >= lo).expect("never reaches v_min");
    for i in k..v.len() {
        assert!(v[i] >= lo[i] - 0.1 && v[i] <= hi[i] + 0.1, "t index {i}: {}", v[i]);
    }
}

#[test]
fn lateral_series_shows_abort_then_change() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["simulate", "--builtin", "lane-change-abort", "--out", dir.path().to_str().unwrap()]);
    let p = dir.path().join("trajectory.csv");
    let (y, ry) = (csv_column(&p, "y"), csv_column(&p, "ref_y"));
    // the planner heads left while the ego holds back
    assert!(y.iter().zip(&ry).any(|(y, r)| r - y > 1.0));
    // and then completes into the middle lane
    let target = 1.5 * 3.75;
    assert!((y.last().unwrap() - target).abs() < 0.2, "{}", y.last().unwrap());
}

#[test]
fn replay_reproduces_the_reference() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["simulate", "--builtin", "overtaking", "--disable-compliance", "--out", dir.path().to_str().unwrap()]);
    let s = read_json(&dir.path().join("summary.json"));
    assert_eq!(s["compliance"], false);
    assert!(s["reference_deviation"].as_f64().unwrap() < 1e-6);
    assert_eq!(s["stats"]["counts"]["intervention"], 0);
}

#[test]
fn scenario_schema_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    std::fs::write(&p, "{\n  \"road\": {\"lanes\": []},\n  \"ego\": 3\n}\n").unwrap();
    let out = roadlaw(&["simulate", p.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line"), "{err}");
}

#[test]
fn threshold_overrides_take_units() {
    let dir = tempfile::tempdir().unwrap();
    let th = dir.path().join("th.json");
    std::fs::write(&th, r#"{"dv_ot": "36 km/h", "d_clmin": "20 m"}"#).unwrap();
    let out = dir.path().join("o");
    let o = out.to_str().unwrap();
    ok(&["simulate", "--builtin", "overtaking", "--thresholds", th.to_str().unwrap(), "--set", "ttcx_min=3s", "--out", o]);
    let sc = read_json(&out.join("scenario.json"));
    assert!((sc["thresholds"]["dv_ot"].as_f64().unwrap() - 10.0).abs() < 1e-12);
    assert_eq!(sc["thresholds"]["d_clmin"], 20.0);
    assert_eq!(sc["thresholds"]["ttcx_min"], 3.0);

    let bad = roadlaw(&["simulate", "--builtin", "overtaking", "--set", "d_clmin=20 km/h", "--out", o]);
    assert!(!bad.status.success());
}

#[test]
fn batch_of_an_empty_directory_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = roadlaw(&["batch", dir.path().to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert!(!out.status.success());
}

#[test]
fn batch_before_equals_audit_and_skips_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    std::fs::create_dir(&data).unwrap();
    let good = save(&data, "a.csv", vec![cruise(1, 0, 2000.0, 25.0, 4.0), cruise(2, 1, 0.0, 18.0, 4.0)]);
    // a track file without its sidecar
    std::fs::write(data.join("b.csv"), "frame,id,x,y\n").unwrap();

    let b = dir.path().join("batch");
    let stdout = ok(&["batch", data.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert!(stdout.contains("before") && stdout.contains("after"));
    let s = read_json(&b.join("summary.json"));
    assert_eq!(s["files"], 2);
    assert_eq!(s["failures"].as_array().unwrap().len(), 1);
    assert_eq!(s["after"]["counts"]["active"], 0);

    let a = dir.path().join("audit");
    ok(&["audit", &good, "--out", a.to_str().unwrap()]);
    assert_eq!(read_json(&a.join("summary.json"))["stats"], s["before"]);
}

#[test]
fn gen_synthetic_writes_parseable_files() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen-synthetic", "--out", dir.path().to_str().unwrap(), "--seed", "7", "--files", "2"]);
    for name in ["synth_007.csv", "synth_008.csv"] {
        let tf = roadlaw_core::dataset::parse(&dir.path().join(name)).unwrap();
        assert!(tf.rejected.is_empty());
        assert!(!tf.tracks.is_empty());
    }
}
