use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn twinforge(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_twinforge")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) {
    let out = twinforge(args, cwd);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn reconstructs_generated_cabinet_hinge() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("recipe.json"), r#"{"category": "cabinet", "seed": 5, "noise": 0.002}"#).unwrap();
    ok(&["synthgen", "--recipe", "recipe.json", "--out", "scene"], d);
    let frames = ["scene/frame_0.apc", "scene/frame_1.apc"];
    let mut args = vec!["segment", "--contacts", "scene/contacts.json", "--out", "labels.json", "--frames"];
    args.extend(frames);
    ok(&args, d);
    let mut args = vec!["fit-joints", "--labels", "labels.json", "--out", "joints.json", "--frames"];
    args.extend(frames);
    ok(&args, d);
    let mut args = vec!["build-model", "--labels", "labels.json", "--joints", "joints.json", "--out", "twin/model.urdf", "--frames"];
    args.extend(frames);
    ok(&args, d);

    let joints = json(&d.join("joints.json"));
    let joint = &joints[0];
    assert_eq!(joint["kind"], "revolute");
    let axis: Vec<f64> = joint["axis"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    // ground truth: +z through (-0.05, -0.21)
    assert!(axis[2].abs() > 0.999, "{axis:?}");
    let origin: Vec<f64> = joint["origin"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!((origin[0] + 0.05).hypot(origin[1] + 0.21) < 0.01, "{origin:?}");
    let swing = joint["displacements"][1].as_f64().unwrap().abs();
    assert!((swing - 0.44).abs() < 0.02, "{swing}");
    let urdf = std::fs::read_to_string(d.join("twin/model.urdf")).unwrap();
    assert!(urdf.contains("type=\"revolute\""));
    assert!(d.join("twin/meshes").is_dir());
}

#[test]
fn missing_required_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = twinforge(&["segment", "--frames", "a.apc"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn domain_errors_exit_one_with_module_name() {
    let dir = tempfile::tempdir().unwrap();
    let out = twinforge(&["fit-joints", "--frames", "absent.apc", "--labels", "l.json", "--out", "j.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("IoError"));
}

#[test]
fn planning_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("recipe.json"), r#"{"category": "drawer", "placement": {"translation": [0.75, 0, 0], "yaw": 0}}"#).unwrap();
    ok(&["synthgen", "--recipe", "recipe.json", "--out", "scene"], d);
    std::fs::write(d.join("icem.json"), r#"{"T": 3, "population": 24, "E": 4, "h": 4}"#).unwrap();
    let plan = |out: &str, workers: &str| {
        ok(
            &[
                "plan", "--model", "scene/model.urdf", "--effector", "suction", "--initial-value", "0.02", "--target-value", "0.1",
                "--target-point", "-0.02,0,0.28", "--approach", "1,0,0", "--icem", "icem.json", "--seed", "7", "--workers", workers, "--out", out,
            ],
            d,
        )
    };
    plan("a.json", "1");
    plan("b.json", "2");
    let a = std::fs::read(d.join("a.json")).unwrap();
    assert_eq!(a, std::fs::read(d.join("b.json")).unwrap());
    assert_eq!(json(&d.join("a.json"))["actions"].as_array().unwrap().len(), 3);
}

#[test]
fn eigengrasp_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["eigengrasp", "synth", "--hand", "four-finger", "--count", "300", "--out", "g.egds", "--seed", "1"], d);
    ok(&["eigengrasp", "fit", "--dataset", "g.egds", "--m", "3", "--out", "basis.json"], d);
    ok(&["eigengrasp", "reconstruct", "--basis", "basis.json", "--coeffs", "0.1,-0.2,0", "--out", "q.json"], d);
    let basis = json(&d.join("basis.json"));
    let q = json(&d.join("q.json"));
    assert_eq!(q.as_array().unwrap().len(), basis["mean"].as_array().unwrap().len());
}

#[test]
fn simulate_traces_every_state() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("recipe.json"), r#"{"category": "laptop", "placement": {"translation": [0.5, 0, 0.3], "yaw": 0}}"#).unwrap();
    ok(&["synthgen", "--recipe", "recipe.json", "--out", "scene"], d);
    std::fs::write(d.join("script.json"), "[[0,0,0,0,0,0,0,0],[0.01,0,0,0,0,0,0,0]]").unwrap();
    ok(&["simulate", "--model", "scene/model.urdf", "--effector", "gripper", "--script", "script.json", "--trace", "trace.jsonl"], d);
    let trace = std::fs::read_to_string(d.join("trace.jsonl")).unwrap();
    let lines: Vec<Value> = trace.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[2]["step"], 2);
}
