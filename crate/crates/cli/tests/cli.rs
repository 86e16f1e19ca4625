use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn sensorcal(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sensorcal"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let scene = sensorcal::synth::cell::test_scene(5);
    std::fs::write(d.join("scene.json"), serde_json::to_string_pretty(&scene).unwrap()).unwrap();

    let out = sensorcal(&["generate", "--config", "scene.json", "--out", "train/"], d);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = sensorcal(&["generate", "--preset", "test", "--seed", "1005", "--out", "test"], d);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(d.join("train/ground_truth.json").exists());

    let ds = read_json(&d.join("train/dataset.json"));
    let prov = &ds["meta"]["provenance"];
    assert_eq!(prov["seed"], 5);
    assert_eq!(prov["tool"], "sensorcal");
    let config_bytes = std::fs::read(d.join("scene.json")).unwrap();
    assert_eq!(prov["inputs"]["config"], sensorcal::io::sha256_hex(&config_bytes));

    let out = sensorcal(
        &["calibrate", "--dataset", "train/dataset.json", "--anchor", "lidar_1", "--out", "result.json"],
        d,
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let result = read_json(&d.join("result.json"));
    assert_eq!(result["anchored"], serde_json::json!(["lidar_1"]));
    assert_eq!(result["provenance"]["seed"], 5);
    assert!(result["provenance"]["inputs"]["dataset"].is_string());
    assert!(result["provenance"]["options"]["solver"]["max_iters"].is_u64());

    let out = sensorcal(
        &[
            "evaluate", "--dataset", "test/dataset.json", "--result", "result.json", "--out", "report.json", "--text",
            "report.txt",
        ],
        d,
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = std::fs::read_to_string(d.join("report.txt")).unwrap();
    assert!(text.contains("RGB-RGB") && text.contains("depth-RGB"));
    let report = read_json(&d.join("report.json"));
    assert_eq!(report["tables"].as_array().unwrap().len(), 5);
    assert!(report["provenance"]["inputs"]["result"].is_string());

    let out = sensorcal(&["report", "--report", "report.json"], d);
    assert_eq!(code(&out), 0);
    assert_eq!(String::from_utf8(out.stdout).unwrap(), text);
}

#[test]
fn stats_prints_table_one_counts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = sensorcal(&["generate", "--preset", "default", "--seed", "2", "--out", "train"], d);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = sensorcal(&["stats", "--dataset", "train/dataset.json"], d);
    assert_eq!(code(&out), 0);
    let stdout = String::from_utf8(out.stdout).unwrap();
    let mut lines = stdout.lines();
    let header: Vec<&str> = lines.next().unwrap().split_whitespace().collect();
    assert_eq!(header, ["#", "collections", "#", "RGB", "partials", "#", "complete"]);
    let counts: Vec<&str> = lines.next().unwrap().split_whitespace().collect();
    assert_eq!(counts, ["23", "35", "5"]);

    let out = sensorcal(&["stats", "--dataset", "train/dataset.json", "--json"], d);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["collections"], 23);
}

#[test]
fn tree_cycle_is_a_validation_error_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = sensorcal(&["generate", "--preset", "test", "--seed", "3", "--noiseless", "--out", "train"], d);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let mut ds = read_json(&d.join("train/dataset.json"));
    let edges = ds["tree"]["edges"].as_array_mut().unwrap();
    let mut a = edges[0].clone();
    a["parent"] = "x".into();
    a["child"] = "y".into();
    let mut b = a.clone();
    b["parent"] = "y".into();
    b["child"] = "x".into();
    edges.push(a);
    edges.push(b);
    std::fs::write(d.join("train/cycle.json"), serde_json::to_string(&ds).unwrap()).unwrap();

    let out = sensorcal(&["calibrate", "--dataset", "train/cycle.json", "--out", "r.json"], d);
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(err.contains("`tree`") && err.contains("cycle"), "{err}");
    assert!(!d.join("r.json").exists());
}

#[test]
fn usage_and_validation_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&sensorcal(&["frobnicate"], d)), 1);
    assert_eq!(code(&sensorcal(&["calibrate", "--out", "r.json"], d)), 1);
    assert_eq!(code(&sensorcal(&["calibrate", "--dataset", "a.json", "--weights", "rgb=x", "--out", "r"], d)), 1);
    assert_eq!(code(&sensorcal(&["--help"], d)), 0);
    assert_eq!(code(&sensorcal(&["calibrate", "--dataset", "missing.json", "--out", "r.json"], d)), 2);
    std::fs::write(d.join("scene.json"), r#"{"seed": 1}"#).unwrap();
    let out = sensorcal(&["generate", "--config", "scene.json", "--out", "o"], d);
    assert_eq!(code(&out), 2);
    assert!(!d.join("o").exists());
}

#[test]
fn unknown_anchor_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = sensorcal(&["generate", "--preset", "test", "--seed", "4", "--out", "train"], d);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = sensorcal(&["calibrate", "--dataset", "train/dataset.json", "--anchor", "nope", "--out", "r.json"], d);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("nope"));
}

#[test]
fn calibrate_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = sensorcal(&["generate", "--preset", "test", "--seed", "6", "--out", "train"], d);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for name in ["a.json", "b.json"] {
        let out = sensorcal(&["calibrate", "--dataset", "train/dataset.json", "--out", name], d);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    assert_eq!(std::fs::read(d.join("a.json")).unwrap(), std::fs::read(d.join("b.json")).unwrap());
}

#[test]
fn label_rewrites_range_detections() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = sensorcal(&["generate", "--preset", "test", "--seed", "8", "--noiseless", "--out", "train"], d);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let ds = read_json(&d.join("train/dataset.json"));
    // seed lidar detections at the centroid of their generated labels and
    // depth detections at their first labeled pixel
    let mut lidar_seeds = Vec::new();
    let mut depth_seeds = Vec::new();
    for c in ds["collections"].as_array().unwrap() {
        for (sensor, det) in c["detections"].as_object().unwrap() {
            let Some(inside) = det["inside"].as_array() else {
                continue;
            };
            if sensor.starts_with("lidar") {
                let mut m = [0.0; 3];
                for p in inside {
                    for (k, v) in m.iter_mut().enumerate() {
                        *v += p[k].as_f64().unwrap() / inside.len() as f64;
                    }
                }
                lidar_seeds.push(serde_json::json!({"collection": c["id"], "sensor": sensor, "point": m}));
            } else if sensor.starts_with("depth") {
                let px = [inside[0][0].as_f64().unwrap() as u32, inside[0][1].as_f64().unwrap() as u32];
                depth_seeds.push(serde_json::json!({"collection": c["id"], "sensor": sensor, "pixel": px}));
            }
        }
    }
    let label_args = ["label", "--dataset", "train/dataset.json", "--config", "label.json", "--out", "train/labeled.json"];

    // without depth seeds the depth sensor loses every detection
    let cfg = serde_json::json!({"seeds": lidar_seeds, "track": false});
    std::fs::write(d.join("label.json"), cfg.to_string()).unwrap();
    let out = sensorcal(&["label", "--dataset", "train/dataset.json", "--config", "label.json", "--out", "other/l.json"], d);
    assert_eq!(code(&out), 2, "output outside the dataset directory is rejected");
    let out = sensorcal(&label_args, d);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = sensorcal(&["calibrate", "--dataset", "train/labeled.json", "--out", "r.json"], d);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(d.join("r.json").exists(), "degenerate results are still written");

    let mut all = lidar_seeds.clone();
    all.extend(depth_seeds);
    let cfg = serde_json::json!({"seeds": all, "track": false});
    std::fs::write(d.join("label.json"), cfg.to_string()).unwrap();
    let out = sensorcal(&label_args, d);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let labeled = read_json(&d.join("train/labeled.json"));
    assert!(labeled["meta"]["provenance"]["inputs"]["label_config"].is_string());
    let out = sensorcal(&["calibrate", "--dataset", "train/labeled.json", "--out", "r.json"], d);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}
