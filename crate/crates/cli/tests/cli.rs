use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use artigen::artcore::synth::cabinet;
use artigen::interop::{load_object, save_object};
use serde_json::{json, Value};

fn artigen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_artigen")).args(args).output().expect("spawn artigen")
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn cabinet_file(dir: &Path) -> PathBuf {
    let p = dir.join("cabinet.json");
    save_object(&cabinet(), &p).unwrap();
    p
}

#[test]
fn validate_reports_and_sets_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let good = cabinet_file(dir.path());
    let v = stdout_json(&artigen(&["validate", s(&good)]));
    assert_eq!(v["valid"], true);
    assert_eq!(v["parts"], 2);

    let mut raw: Value = serde_json::from_str(&std::fs::read_to_string(&good).unwrap()).unwrap();
    raw["parts"][1]["joint"]["parent"] = json!(1);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, raw.to_string()).unwrap();
    let out = artigen(&["validate", s(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["valid"], false);
    assert!(!v["violations"].as_array().unwrap().is_empty());
}

#[test]
fn missing_file_exits_with_error() {
    let out = artigen(&["validate", "/nonexistent/object.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn simplify_and_pose_write_objects() {
    let dir = tempfile::tempdir().unwrap();
    let cab = cabinet_file(dir.path());
    let simple = dir.path().join("simple.json");
    stdout_json(&artigen(&["simplify", s(&cab), "-o", s(&simple)]));
    assert_eq!(load_object(&simple).unwrap().len(), 2);

    let posed = dir.path().join("posed.json");
    stdout_json(&artigen(&["pose", s(&cab), "--fraction", "1", "--canonical", "-o", s(&posed)]));
    let obj = load_object(&posed).unwrap();
    let b = obj.parts[1].geometry.bounds();
    // The door swings about -z at the origin, a quarter turn puts it at x <= 0.
    assert!(b.max[0] < 1e-6 && b.min[0] > -0.06, "{b:?}");

    let by_state = stdout_json(&artigen(&["pose", s(&cab), "--state", "0,0"]));
    assert_eq!(by_state["parts"].as_array().unwrap().len(), 2);

    assert_eq!(artigen(&["pose", s(&cab), "--fraction", "1.5"]).status.code(), Some(2));
}

#[test]
fn eval_of_identical_objects_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cab = cabinet_file(dir.path());
    let out = artigen(&["eval", s(&cab), s(&cab), "--points", "512", "--aor-res", "16"]);
    let v = stdout_json(&out);
    for key in ["d_gIoU", "d_cDist", "d_CD"] {
        assert!(v["rs"][key].as_f64().unwrap() < 1e-9, "{key}: {v}");
        assert!(v["as"][key].as_f64().unwrap() < 1e-9, "{key}: {v}");
    }
    assert!(v["aor"].as_f64().is_some());
    assert!(String::from_utf8_lossy(&out.stderr).contains("d_gIoU"));

    let rest = stdout_json(&artigen(&["eval", s(&cab), s(&cab), "--points", "256", "--rest-only"]));
    assert!(rest.get("as").is_none());
}

#[test]
fn export_urdf_to_file_and_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let cab = cabinet_file(dir.path());
    let urdf = dir.path().join("cab.urdf");
    let v = stdout_json(&artigen(&["export-urdf", s(&cab), "--name", "cab", "-o", s(&urdf)]));
    assert_eq!(v["joints"], 1);
    let text = std::fs::read_to_string(&urdf).unwrap();
    assert!(text.contains(r#"<robot name="cab">"#));
    assert!(text.contains(r#"type="revolute""#));

    let inline = stdout_json(&artigen(&["export-urdf", s(&cab)]));
    assert!(inline["urdf"].as_str().unwrap().contains("<joint"));
}

#[test]
fn extract_physx_builds_parts() {
    let dir = tempfile::tempdir().unwrap();
    let mut preds = Vec::new();
    for i in 0..4 {
        let x = i as f64 * 0.1;
        preds.push(json!({"position": [x, 0, 0], "part_id": 0, "parent_id": -1, "joint_type": "fixed",
            "axis": [0, 0, 1], "pivot": [0, 0, 0], "range": [0, 0]}));
        preds.push(json!({"position": [x, 1, 0], "part_id": 1, "parent_id": 0, "joint_type": "prismatic",
            "axis": [0, 1, 0], "pivot": [0, 1, 0], "range": [0, 0.3]}));
    }
    let path = dir.path().join("preds.json");
    std::fs::write(&path, Value::Array(preds).to_string()).unwrap();
    let out = dir.path().join("obj.json");
    stdout_json(&artigen(&["extract-physx", s(&path), "-o", s(&out)]));
    let obj = load_object(&out).unwrap();
    assert_eq!(obj.len(), 2);
    assert_eq!(obj.parts[1].joint.joint_type, artigen::artcore::JointType::Prismatic);
}

#[test]
fn tiny_train_sample_and_regress() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(
        &cfg,
        "objects = 4\nstage1_steps = 3\n[net]\ndepth = 2\ndim = 16\nheads = 2\npe_dim = 12\ntime_dim = 8\n\
         [head]\ninput_dim = 32\nhidden = 16\nlayers = 3\n[train]\nsteps = 4\nbatch_size = 2\n",
    )
    .unwrap();
    let ck = dir.path().join("ck.bin");
    let v = stdout_json(&artigen(&["train-toy", "--config", s(&cfg), "--checkpoint", s(&ck)]));
    assert_eq!(v["steps"], 4);
    assert!(v["fm_before"].as_f64().unwrap().is_finite());

    let mut values = vec![-1i64; 256];
    for r in 4..12 {
        for c in 2..8 {
            values[r * 16 + c] = 0;
        }
        for c in 8..14 {
            values[r * 16 + c] = 1;
        }
    }
    let mask = dir.path().join("mask.json");
    std::fs::write(&mask, json!({"height": 16, "width": 16, "values": values}).to_string()).unwrap();

    let gen = dir.path().join("gen.json");
    let cache = dir.path().join("cache.bin");
    stdout_json(&artigen(&[
        "sample",
        "--checkpoint",
        s(&ck),
        "--mask",
        s(&mask),
        "--steps",
        "3",
        "--cache-steps",
        "2",
        "--cache-out",
        s(&cache),
        "-o",
        s(&gen),
    ]));
    let obj = load_object(&gen).unwrap();
    assert_eq!(obj.len(), 2);
    assert!(obj.is_depth1());

    let regressed = stdout_json(&artigen(&["regress-arti", "--cache", s(&cache), "--checkpoint", s(&ck), "--object", s(&gen)]));
    assert_eq!(regressed["parts"].as_array().unwrap().len(), 2);
}
