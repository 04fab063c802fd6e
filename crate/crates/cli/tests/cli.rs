use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use slam_core::eval::{evaluate, IcpConfig};
use slam_core::geometry::Trajectory;

fn slam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slam")).args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_config(dir: &Path, name: &str, cfg: Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn metrics(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("metrics.json")).unwrap()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn generate_writes_a_sequence_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let out = slam(&["generate", "--builtin", "single-room", "--frames", "6", "--seed", "2", "--out", p(dir)]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    assert!(a.join("gt_traj.tum").exists());
    let mut names: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() > 3);
    for name in names {
        assert_eq!(std::fs::read(a.join(&name)).unwrap(), std::fs::read(b.join(&name)).unwrap(), "{name:?}");
    }

    // The same scene from its written spec.
    let c = tmp.path().join("c");
    let out = slam(&["generate", p(&a.join("scene.json")), "--out", p(&c)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(std::fs::read(a.join("gt_traj.tum")).unwrap(), std::fs::read(c.join("gt_traj.tum")).unwrap());
}

#[test]
fn generate_rejects_a_path_through_a_wall() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = slam_core::synth::single_room(0, 20);
    let mut value = serde_json::to_value(&spec).unwrap();
    value["trajectory"]["waypoints"][1]["position"][0] = json!(6.0);
    let path = tmp.path().join("bad.json");
    std::fs::write(&path, value.to_string()).unwrap();
    let out = slam(&["generate", p(&path), "--out", p(&tmp.path().join("seq"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("free space"), "{}", stderr(&out));
}

#[test]
fn noiseless_oracle_run_is_exact_and_complete() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "cfg.json", json!({
        "predictor": "oracle",
        "scene": {"builtin": "single_room", "frames": 40},
    }));
    let out_dir = tmp.path().join("run");
    let out = slam(&["run", "--config", p(&cfg), "--out", p(&out_dir)]);
    assert!(out.status.success(), "{}", stderr(&out));
    for f in ["est_traj.tum", "map.ply", "submaps.json", "posegraph.g2o", "metrics.json"] {
        assert!(out_dir.join(f).exists(), "{f} missing");
    }
    // Centimeters: 1e-6 m.
    assert!(metrics(&out_dir)["report"]["ate_rmse"].as_f64().unwrap() < 1e-4);
}

#[test]
fn loop_closure_beats_open_loop() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "cfg.json", json!({
        "predictor": "oracle",
        "seed": 0,
        "scene": {"builtin": "two_room_loop", "frames": 200},
        "noise": {"point_sigma": 0.002, "drift_rot": 0.000873, "drift_trans": 0.0005},
    }));
    let out_dir = tmp.path().join("run");
    let out = slam(&["run", "--config", p(&cfg), "--out", p(&out_dir)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let m = metrics(&out_dir);
    let (ate, open) = (m["report"]["ate_rmse"].as_f64().unwrap(), m["open_loop_ate"].as_f64().unwrap());
    assert!(m["loops"].as_u64().unwrap() >= 1);
    assert!(ate < open, "ate {ate} open loop {open}");
}

#[test]
fn toy_predictor_smoke_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "cfg.json", json!({
        "scene": {"builtin": "single_room", "frames": 8},
        "model": {"dim": 16, "state_tokens": 8, "heads": 2, "blocks": 1},
    }));
    let out_dir = tmp.path().join("run");
    let out = slam(&["run", "--config", p(&cfg), "--predictor", "toy", "--out", p(&out_dir)]);
    assert!(out.status.success(), "{}", stderr(&out));
    for f in ["est_traj.tum", "map.ply", "submaps.json", "posegraph.g2o", "metrics.json"] {
        assert!(out_dir.join(f).exists(), "{f} missing");
    }
}

#[test]
fn runs_reproduce_metrics_byte_for_byte() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "cfg.json", json!({
        "scene": {"builtin": "single_room", "frames": 30},
        "noise": {"point_sigma": 0.003, "drift_rot": 0.001, "dropout": 0.1},
    }));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(slam(&["run", "--config", p(&cfg), "--seed", "7", "--out", p(&a)]).status.success());
    assert!(slam(&["--threads", "1", "run", "--config", p(&cfg), "--seed", "7", "--out", p(&b)]).status.success());
    for f in ["metrics.json", "est_traj.tum", "map.ply", "posegraph.g2o", "submaps.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn bad_config_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "cfg.json", json!({"frontend": {"tau_kf": 0.2, "tau_anchor": 0.5}}));
    let out = slam(&["run", "--config", p(&cfg), "--out", p(&tmp.path().join("run"))]);
    assert_eq!(out.status.code(), Some(2));
    let cfg = write_config(tmp.path(), "missing.json", json!({"scene": {"spec": "nowhere.json"}}));
    let out = slam(&["run", "--config", p(&cfg), "--out", p(&tmp.path().join("run"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nowhere.json"));
}

#[test]
fn pipeline_failure_writes_an_error_report() {
    let tmp = tempfile::tempdir().unwrap();
    // Nearly every pixel dropped: some frame ends up with no points.
    let cfg = write_config(tmp.path(), "cfg.json", json!({
        "scene": {"builtin": "single_room", "frames": 20},
        "noise": {"point_sigma": 0.001, "dropout": 0.9999},
    }));
    let out_dir = tmp.path().join("run");
    let out = slam(&["run", "--config", p(&cfg), "--out", p(&out_dir)]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("error.json")).unwrap()).unwrap();
    assert_eq!(report["code"], 3);
    assert!(report["message"].as_str().unwrap().contains("no valid"));
}

fn fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let seq = slam_core::synth::generate(&slam_core::synth::single_room(1, 30)).unwrap();
    let gt = seq.trajectory();
    let est = Trajectory::from_entries(
        gt.entries()
            .iter()
            .enumerate()
            .map(|(i, (t, pose))| {
                let wobble = slam_core::geometry::SE3Pose::from_translation([0.01 * (i as f64).sin(), 0.0, 0.005].into());
                (*t, pose.compose(&wobble))
            })
            .collect(),
    )
    .unwrap();
    let (e, g) = (dir.join("est.tum"), dir.join("gt.tum"));
    std::fs::write(&e, est.to_tum()).unwrap();
    std::fs::write(&g, gt.to_tum()).unwrap();
    (e, g)
}

#[test]
fn eval_matches_the_library_and_plots() {
    let tmp = tempfile::tempdir().unwrap();
    let (e, g) = fixture(tmp.path());
    let out_dir = tmp.path().join("eval");
    let out = slam(&["eval", "--est", p(&e), "--gt", p(&g), "--out", p(&out_dir)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let read = |p: &Path| Trajectory::from_tum(&std::fs::read_to_string(p).unwrap()).unwrap();
    let direct = evaluate(&read(&e), &read(&g), None, &IcpConfig::default()).unwrap();
    assert_eq!(metrics(&out_dir)["ate_rmse"].as_f64().unwrap(), direct.ate_rmse);
    assert!(direct.ate_rmse > 0.0);
    let svg = std::fs::read_to_string(out_dir.join("trajectory.svg")).unwrap();
    assert!(svg.contains("<polyline") && svg.contains("<line"));

    let out = slam(&["eval", "--est", p(&g), "--gt", p(&g), "--out", p(&out_dir)]);
    assert!(out.status.success());
    assert_eq!(metrics(&out_dir)["ate_rmse"].as_f64().unwrap(), 0.0);
}

#[test]
fn eval_reports_the_malformed_line() {
    let tmp = tempfile::tempdir().unwrap();
    let (e, g) = fixture(tmp.path());
    let text = std::fs::read_to_string(&e).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[6] = "0.2 1 2 three 0 0 0 1";
    std::fs::write(&e, lines.join("\n") + "\n").unwrap();
    let out = slam(&["eval", "--est", p(&e), "--gt", p(&g), "--out", p(&tmp.path().join("eval"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 7"), "{}", stderr(&out));
}

#[test]
fn export_g2o_round_trips_and_optimizes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "cfg.json", json!({
        "scene": {"builtin": "single_room", "frames": 40},
        "noise": {"drift_rot": 0.002},
        "frontend": {"tau_anchor": 0.5},
    }));
    let run_dir = tmp.path().join("run");
    assert!(slam(&["run", "--config", p(&cfg), "--out", p(&run_dir)]).status.success());
    let plain = tmp.path().join("plain.g2o");
    assert!(slam(&["export-g2o", p(&run_dir), "--out", p(&plain)]).status.success());
    assert_eq!(std::fs::read(&plain).unwrap(), std::fs::read(run_dir.join("posegraph.g2o")).unwrap());
    let optimized = tmp.path().join("opt.g2o");
    assert!(slam(&["export-g2o", p(&plain), "--optimize", "--out", p(&optimized)]).status.success());
    let graph = slam_core::posegraph::read_g2o(&std::fs::read_to_string(&optimized).unwrap()).unwrap();
    assert!(graph.nodes.len() > 1);
    let out = slam(&["export-g2o", p(&tmp.path().join("cfg.json")), "--out", p(&optimized)]);
    assert_eq!(out.status.code(), Some(2));
}
