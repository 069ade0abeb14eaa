use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn fusepath(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fusepath"))
        .args(args)
        .env_remove("FUSEPATH_THREADS")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("valid JSON")
}

#[test]
fn two_points_fuse_at_unit_weight() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "x.csv", "3\n1\n");
    for q in ["1", "2"] {
        let v = json(&fusepath(&["fit-path", "--input", &input, "--q", q, "--lambdas", "0,0.5,1.5"]));
        let ks: Vec<u64> = v["points"].as_array().unwrap().iter().map(|p| p["k"].as_u64().unwrap()).collect();
        assert_eq!(ks, [2, 2, 1], "q={q}");
        let mid = &v["points"][1];
        assert!((mid["rss"].as_f64().unwrap() - 0.5).abs() < 1e-9);

        let v = json(&fusepath(&["lambda-max", "--input", &input, "--q", q]));
        assert!((v["lambda_upper"].as_f64().unwrap() - 1.0).abs() < 1e-9);
        assert!((v["loose_bound"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn constant_input_is_one_cluster_with_zero_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "c.csv", "x,y\n2,5\n2,5\n2,5\n");
    let out = fusepath(&["lambda-max", "--input", &input]);
    let v = json(&out);
    assert_eq!(v["lambda_upper"].as_f64(), Some(0.0));
    assert_eq!(v["status"], "identical_rows");
    assert!(!out.stderr.is_empty());

    let v = json(&fusepath(&["fit-path", "--input", &input, "--grid-count", "5"]));
    for p in v["points"].as_array().unwrap() {
        assert_eq!(p["k"], 1);
    }
}

#[test]
fn malformed_input_exits_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("bad_value.csv", "1,2\n3,x\n", "line 2, column 2"),
        ("ragged.csv", "1,2\n3\n", "expected 2"),
        ("empty.csv", "", "no data rows"),
        ("nan.csv", "1\nNaN\n", "non-finite"),
    ];
    for (name, text, needle) in cases {
        let input = write(dir.path(), name, text);
        let out = fusepath(&["fit-path", "--input", &input]);
        assert_eq!(out.status.code(), Some(1), "{name}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(needle), "{name}: {err}");
        assert!(out.stdout.is_empty());
    }
    let out = fusepath(&["fit-path", "--input", "/nonexistent/file.csv"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "x.csv", "3\n1\n");
    for args in [
        vec!["fit-path", "--input", &input, "--q", "3"],
        vec!["fit-path", "--input", &input, "--lambdas", ""],
        vec!["fit-path", "--input", &input, "--tol", "-1"],
        vec!["fit-path", "--input", &input, "--grid-count", "0"],
        vec!["fit-path", "--input", &input, "--lambdas", "0.5,0.1"],
        vec!["experiment", "table1"],
        vec!["experiment", "rand-curves", "--seed", "1", "--methods", "spectral"],
        vec!["no-such-command"],
    ] {
        let out = fusepath(&args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
    }
    assert_eq!(fusepath(&["--help"]).status.code(), Some(0));
    let out = Command::new(env!("CARGO_BIN_EXE_fusepath"))
        .args(["lambda-max", "--input", &input])
        .env("FUSEPATH_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn exhausted_iterations_exit_two_with_results() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "x.csv", &two_blobs());
    let out = fusepath(&["fit-path", "--input", &input, "--max-iter", "1", "--tol", "1e-14", "--lambdas", "0.05,0.1,0.2"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let points = v["points"].as_array().unwrap();
    assert_eq!(points.len(), 3);
    assert!(points.iter().any(|p| p["converged"] == false));
}

#[test]
fn csv_and_json_agree() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "x.csv", "0,0\n0.2,0.1\n5,5\n5.1,4.8\n");
    let v = json(&fusepath(&["dof", "--input", &input, "--q", "2", "--grid-count", "6"]));
    let out = fusepath(&["dof", "--input", &input, "--q", "2", "--grid-count", "6", "--format", "csv"]);
    assert!(out.status.success());
    let mut reader = csv::Reader::from_reader(out.stdout.as_slice());
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    let points = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), points.len());
    for (row, p) in rows.iter().zip(points) {
        assert_eq!(row[0].parse::<f64>().unwrap(), p["lambda"].as_f64().unwrap());
        assert_eq!(row[2].parse::<f64>().unwrap(), p["df"].as_f64().unwrap());
    }
}

fn two_blobs() -> String {
    // two groups of ten in five dimensions, offsets +-2, noise of scale 0.5
    let mut state = 0x2545f4914f6cdd1du64;
    let mut unif = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    let mut text = String::new();
    for centre in [-2.0, 2.0] {
        for _ in 0..10 {
            let row: Vec<String> = (0..5).map(|_| format!("{:.4}", centre + (unif() - 0.5) * 1.7)).collect();
            text.push_str(&row.join(","));
            text.push('\n');
        }
    }
    text
}

#[test]
fn ebic_selection_is_the_curve_minimum() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "x.csv", &two_blobs());
    let v = json(&fusepath(&["select-ebic", "--input", &input, "--grid-count", "40", "--refine", "4", "--gamma-ebic", "1"]));
    assert_eq!(v["excluded_lambdas"].as_array().unwrap().len(), 1);
    let curve = v["curve"].as_array().unwrap();
    let best = curve.iter().map(|e| e["ebic"].as_f64().unwrap()).fold(f64::INFINITY, f64::min);
    assert_eq!(v["ebic"].as_f64().unwrap(), best);
    assert_eq!(curve.iter().filter(|e| e["selected"] == true).count(), 1);
    assert_eq!(v["k"], 2);
    let labels: Vec<u64> = v["labels"].as_array().unwrap().iter().map(|l| l.as_u64().unwrap()).collect();
    assert_eq!(labels, [[0u64; 10], [1u64; 10]].concat());
}

#[test]
fn file_output_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for out in [&a, &b] {
        let o = fusepath(&[
            "experiment", "dof-figure", "--seed", "11", "--reps", "4", "--q", "1", "--out", out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(o.stdout.is_empty());
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let sidecar = dir.path().join("a.json.config.json");
    let cfg: Value = serde_json::from_slice(&std::fs::read(sidecar).unwrap()).unwrap();
    assert_eq!(cfg["seed"], 11);
}
