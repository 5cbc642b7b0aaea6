use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn repgn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_repgn")).args(args).output().expect("binary runs")
}

fn workdir(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("cli").join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(path: &Path, value: &Value) {
    fs::write(path, serde_json::to_vec_pretty(value).unwrap()).unwrap();
}

fn read(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn two_boxes() -> Value {
    json!({
        "image_id": "pair",
        "width": 10,
        "height": 10,
        "proposals": [
            {"box": [0.0, 0.0, 2.0, 2.0], "feature": [1.0, 0.0]},
            {"box": [1.0, 1.0, 3.0, 3.0], "feature": [0.0, 1.0]}
        ]
    })
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(repgn(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(repgn(&["graph", "build"]).status.code(), Some(1));
    assert_eq!(repgn(&["--help"]).status.code(), Some(0));
    assert_eq!(repgn(&["--version"]).status.code(), Some(0));
}

#[test]
fn graph_build_two_boxes() {
    let dir = workdir("graph_build");
    let input = dir.join("pair.json");
    write(&input, &two_boxes());
    let output = dir.join("graph.json");
    let out = repgn(&["graph", "build", "--input", s(&input), "--iou-thr", "0.1", "--output", s(&output)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let g = read(&output);
    let edges = g["edges"].as_array().unwrap();
    assert_eq!(edges.len(), 1);
    assert_eq!(edges[0][0], 0);
    assert_eq!(edges[0][1], 1);
    assert!((edges[0][2].as_f64().unwrap() - 1.0 / 7.0).abs() < 1e-12);

    let sparse = dir.join("sparse.json");
    let out = repgn(&["graph", "build", "--input", s(&input), "--iou-thr", "0.5", "--output", s(&sparse)]);
    assert!(out.status.success());
    assert!(read(&sparse)["edges"].as_array().unwrap().is_empty());
}

#[test]
fn malformed_input_leaves_no_output() {
    let dir = workdir("malformed");
    let input = dir.join("bad.json");
    fs::write(&input, b"{\"image_id\": \"x\", \"width\": 10, \"proposals\": [").unwrap();
    let output = dir.join("out.json");
    let out = repgn(&["graph", "build", "--input", s(&input), "--iou-thr", "0.3", "--output", s(&output)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!output.exists());
    assert!(fs::read_dir(&dir).unwrap().count() == 1, "stray temporary files left behind");

    let inverted = dir.join("inverted.json");
    write(
        &inverted,
        &json!({"image_id": "x", "width": 10, "height": 10, "proposals": [{"box": [5.0, 5.0, 1.0, 1.0]}]}),
    );
    let out = repgn(&["forward", "--input", s(&inverted), "--output", s(&output)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!output.exists());

    let missing = dir.join("missing.json");
    let out = repgn(&["forward", "--input", s(&missing), "--output", s(&output)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn numerical_failure_exits_with_two() {
    let dir = workdir("numerical");
    let input = dir.join("huge.json");
    write(
        &input,
        &json!({
            "image_id": "huge", "width": 10, "height": 10,
            "proposals": [
                {"box": [0.0, 0.0, 4.0, 4.0], "feature": [1e200, -1e200]},
                {"box": [1.0, 1.0, 5.0, 5.0], "feature": [-1e200, 1e200]}
            ]
        }),
    );
    let output = dir.join("out.json");
    let out = repgn(&["forward", "--input", s(&input), "--output", s(&output)]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!output.exists());
}

#[test]
fn oracle_commands_pass() {
    let out = repgn(&["oracle", "ncut", "--max-n", "10", "--trials", "200", "--seed", "7"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["agreements"], 200);

    let out = repgn(&["oracle", "grad", "--trials", "10", "--seed", "3"]);
    assert!(out.status.success());
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(summary["max_rel_error"].as_f64().unwrap() < 1e-5);
}

#[test]
fn gen_pool_and_components() {
    let dir = workdir("gen_pool");
    let scene = dir.join("scene.json");
    let out = repgn(&["gen", "--clusters", "3", "--per-cluster", "8", "--seed", "4", "--output", s(&scene)]);
    assert!(out.status.success());
    assert_eq!(read(&scene)["proposals"].as_array().unwrap().len(), 24);

    let parts = dir.join("parts.json");
    let out = repgn(&["pool", "gcpool", "--input", s(&scene), "--output", s(&parts)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let parts = read(&parts);
    assert_eq!(parts["coarse"].as_array().unwrap().len(), 3);
    assert_eq!(parts["labels"].as_array().unwrap().len(), 24);
    let stats: Value = serde_json::from_slice(out.stderr.trim_ascii()).unwrap();
    assert_eq!(stats["parts"], 3);

    let comps = dir.join("components.json");
    let out = repgn(&["graph", "components", "--input", s(&scene), "--min-size", "3", "--output", s(&comps)]);
    assert!(out.status.success());
    let comps = read(&comps);
    assert_eq!(comps["component_sizes"], json!([8, 8, 8]));
    assert!(comps["removed"].as_array().unwrap().is_empty());
}

#[test]
fn cut_ncut_modes() {
    let dir = workdir("cut");
    let graph = dir.join("path.json");
    write(&graph, &json!({"nodes": 4, "edges": [[0, 1, 1.0], [1, 2, 1.0], [2, 3, 1.0]]}));
    for extra in [&[][..], &["--brute-force"][..]] {
        let mut args = vec!["cut", "ncut", "--input", s(&graph)];
        args.extend_from_slice(extra);
        let out = repgn(&args);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let v: Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(v["labels"], json!([0, 0, 1, 1]));
        assert_eq!(v["ncut"].as_f64().unwrap(), 2.0 / 3.0);
    }
    let out = repgn(&["cut", "ncut", "--input", s(&graph), "--stop-ncut", "0.1"]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["labels"], json!([0, 0, 0, 0]));
}

#[test]
fn params_file_reproduces_seeded_defaults() {
    let dir = workdir("params");
    let scene = dir.join("scene.json");
    assert!(repgn(&["gen", "--clusters", "2", "--per-cluster", "6", "--dim", "5", "--output", s(&scene)])
        .status
        .success());
    let params = dir.join("params.json");
    assert!(repgn(&["params", "init", "--dim", "5", "--seed", "3", "--output", s(&params)]).status.success());

    let (a, b) = (dir.join("a.json"), dir.join("b.json"));
    let report = dir.join("report.json");
    let out = repgn(&["forward", "--input", s(&scene), "--seed", "3", "--output", s(&a), "--report", s(&report)]);
    assert!(out.status.success());
    let out = repgn(&["forward", "--input", s(&scene), "--params", s(&params), "--output", s(&b)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let report = read(&report);
    assert_eq!(report["proposals"], 12);
    assert_eq!(report["parts"], 2);
    assert_eq!(read(&a)["features"].as_array().unwrap().len(), 12);
}

#[test]
fn attend_and_no_gcpool_outputs() {
    let dir = workdir("attend");
    let scene = dir.join("scene.json");
    assert!(repgn(&["gen", "--clusters", "2", "--per-cluster", "5", "--output", s(&scene)]).status.success());
    for cmd in [&["attend"][..], &["forward", "--no-gcpool"][..]] {
        let output = dir.join("out.json");
        let mut args = cmd.to_vec();
        args.extend(["--input", s(&scene), "--output", s(&output)]);
        let out = repgn(&args);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let v = read(&output);
        assert_eq!(v["ids"].as_array().unwrap().len(), 10);
        assert_eq!(v["features"][0].as_array().unwrap().len(), 7);
    }
}
