//! End-to-end tests of the `hrt` binary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hrt_core::cli::{execute_run, RunArgs};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::Value;
use tempfile::TempDir;

fn hrt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hrt")).args(args).output().expect("launch hrt")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// 50 rows, 5 features; `y = 2·x0 + x1 + noise`.
fn write_toy_csv(dir: &Path) -> PathBuf {
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let mut text = String::from("x0,x1,x2,x3,x4,y\n");
    for _ in 0..50 {
        let x: Vec<f64> = (0..5).map(|_| StandardNormal.sample(&mut r)).collect();
        let noise: f64 = StandardNormal.sample(&mut r);
        let y = 2.0 * x[0] + x[1] + 0.3 * noise;
        for v in &x {
            write!(text, "{v},").unwrap();
        }
        writeln!(text, "{y}").unwrap();
    }
    let path = dir.join("toy.csv");
    fs::write(&path, text).unwrap();
    path
}

fn base_args(input: &Path) -> Vec<String> {
    [
        "run",
        "--input",
        path_str(input),
        "--model",
        "ridge",
        "--mode",
        "cv",
        "--nsamples",
        "99",
        "--sampler",
        "gaussian",
        "--calibrate",
        "off",
        "--seed",
        "3",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn run_to(args: &[String], out: &Path) -> Value {
    let mut all: Vec<&str> = args.iter().map(String::as_str).collect();
    all.extend(["--output", path_str(out)]);
    let o = hrt(&all);
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_str(&fs::read_to_string(out).unwrap()).unwrap()
}

#[test]
fn run_reports_schema_and_finds_signal() {
    let dir = TempDir::new().unwrap();
    let input = write_toy_csv(dir.path());
    let report = run_to(&base_args(&input), &dir.path().join("r.json"));
    assert_eq!(report["method"], "bh");
    assert_eq!(report["seed"], 3);
    assert!(report["version"].is_string());
    assert_eq!(report["config"]["hrt"]["nsamples"], 99);
    let features = report["features"].as_array().unwrap();
    assert_eq!(features.len(), 5);
    for f in features {
        for key in ["name", "p_value", "t", "k", "weight_sum", "selected"] {
            assert!(f.get(key).is_some(), "missing {key}");
        }
        assert_eq!(f["k"], 99);
    }
    assert_eq!(features[0]["name"], "x0");
    assert_eq!(features[0]["p_value"].as_f64().unwrap(), 0.01);
    assert_eq!(features[0]["selected"], true);
    let selected = features.iter().filter(|f| f["selected"] == true).count();
    assert_eq!(report["n_discoveries"].as_u64().unwrap() as usize, selected);
}

#[test]
fn fixed_seed_gives_byte_identical_reports() {
    let dir = TempDir::new().unwrap();
    let input = write_toy_csv(dir.path());
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    run_to(&base_args(&input), &a);
    run_to(&base_args(&input), &b);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn report_file_matches_in_memory_result() {
    let dir = TempDir::new().unwrap();
    let input = write_toy_csv(dir.path());
    let out = dir.path().join("r.json");
    let from_file = run_to(&base_args(&input), &out);
    let args = RunArgs {
        input: Some(input.clone()),
        model: Some("ridge".into()),
        mode: Some("cv".into()),
        nsamples: Some(99),
        sampler: Some("gaussian".into()),
        calibrate: Some("off".into()),
        seed: Some(3),
        ..Default::default()
    };
    let report = execute_run(&args.resolve().unwrap()).unwrap();
    assert_eq!(serde_json::to_value(&report).unwrap(), from_file);
}

#[test]
fn malformed_row_exits_nonzero_and_names_the_row() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("bad.csv");
    fs::write(&input, "x0,x1,y\n1,2,3\n4,5,6\n7,eight,9\n").unwrap();
    let o = hrt(&["run", "--input", path_str(&input), "--nsamples", "10"]);
    assert_eq!(o.status.code(), Some(1));
    let err: Value = serde_json::from_slice(o.stderr.trim_ascii()).unwrap();
    assert_eq!(err["error"]["kind"], "data");
    let msg = err["error"]["message"].as_str().unwrap();
    assert!(msg.contains("row 3"), "{msg}");
    assert!(msg.contains("eight"), "{msg}");
}

#[test]
fn unknown_column_and_bad_flag_are_rejected() {
    let dir = TempDir::new().unwrap();
    let input = write_toy_csv(dir.path());
    let o = hrt(&["run", "--input", path_str(&input), "--features", "x0,nope", "--dry-run"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope"));
    let o = hrt(&["run", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn dry_run_validates_without_fitting() {
    let dir = TempDir::new().unwrap();
    let input = write_toy_csv(dir.path());
    let o = hrt(&["run", "--input", path_str(&input), "--features", "x1,x3", "--dry-run"]);
    assert!(o.status.success());
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["dry_run"], true);
    assert_eq!(v["n_samples"], 50);
    assert_eq!(v["n_features"], 5);
    assert_eq!(v["n_tested"], 2);
}

#[test]
fn flags_override_config_file() {
    let dir = TempDir::new().unwrap();
    let input = write_toy_csv(dir.path());
    let config = dir.path().join("hrt.conf");
    fs::write(&config, "# defaults\nnsamples = 50\nfolds = 4\nfeatures = x0\n").unwrap();
    let mut args = base_args(&input);
    let k = args.iter().position(|a| a == "--nsamples").unwrap();
    args[k + 1] = "20".into();
    args.extend(["--config".into(), path_str(&config).into()]);
    let report = run_to(&args, &dir.path().join("r.json"));
    assert_eq!(report["config"]["hrt"]["nsamples"], 20);
    assert_eq!(report["config"]["hrt"]["folds"], 4);
    assert_eq!(report["features"].as_array().unwrap().len(), 1);
    assert_eq!(report["features"][0]["k"], 20);
}

#[test]
fn select_reproduces_run_selection() {
    let dir = TempDir::new().unwrap();
    let input = write_toy_csv(dir.path());
    let run_path = dir.path().join("r.json");
    let report = run_to(&base_args(&input), &run_path);
    let o = hrt(&["select", "--pvalues", path_str(&run_path), "--target-fdr", "0.1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let sel: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(sel["n_discoveries"], report["n_discoveries"]);
    for (s, f) in sel["features"].as_array().unwrap().iter().zip(report["features"].as_array().unwrap()) {
        assert_eq!(s["name"], f["name"]);
        assert_eq!(s["value"], f["p_value"]);
        assert_eq!(s["selected"], f["selected"]);
    }
}

#[test]
fn select_from_csv_columns() {
    let dir = TempDir::new().unwrap();
    let pv = dir.path().join("p.csv");
    fs::write(&pv, "name,p_value\na,0.001\nb,0.5\nc,0.02\nd,0.9\n").unwrap();
    let o = hrt(&["select", "--pvalues", path_str(&pv), "--target-fdr", "0.1"]);
    let sel: Value = serde_json::from_slice(&o.stdout).unwrap();
    let chosen: Vec<&str> = sel["features"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|f| f["selected"] == true)
        .map(|f| f["name"].as_str().unwrap())
        .collect();
    assert_eq!(chosen, ["a", "c"]);

    let st = dir.path().join("w.csv");
    let mut text = String::from("statistic\n");
    for i in 1..=12 {
        writeln!(text, "{}", i as f64).unwrap();
    }
    text.push_str("-0.5\n");
    fs::write(&st, text).unwrap();
    let o = hrt(&["select", "--pvalues", path_str(&st), "--select", "erk", "--target-fdr", "0.2"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
    let sel: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(sel["n_discoveries"], 12);
    assert!(sel["caveat"].is_string());
}

#[test]
fn bench_dry_run_and_small_run() {
    let dir = TempDir::new().unwrap();
    let o = hrt(&["bench", "--dry-run", "--trials", "3", "--seed", "8"]);
    assert!(o.status.success());
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["spec"]["trials"], 3);
    assert_eq!(v["spec"]["seed"], 8);
    assert_eq!(v["spec"]["p"], 100);

    let spec = dir.path().join("spec.json");
    fs::write(
        &spec,
        r#"{"n": 80, "p": 8, "signals": 4, "models": [{"family": "ols"}],
            "variants": [{"kind": "hrt", "mode": "cv"}, {"kind": "permutation", "mode": "cv"}],
            "hrt": {"nsamples": 50, "calibration": {"kind": "off"}, "cde": {"kind": "gaussian_joint"}}}"#,
    )
    .unwrap();
    let csv = dir.path().join("trials.csv");
    let out = dir.path().join("bench.json");
    let o = hrt(&[
        "bench",
        "--spec",
        path_str(&spec),
        "--trials",
        "2",
        "--csv",
        path_str(&csv),
        "--output",
        path_str(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["report"]["summaries"].as_array().unwrap().len(), 2);
    let rows: Vec<String> = fs::read_to_string(&csv).unwrap().lines().map(str::to_owned).collect();
    assert_eq!(rows[0], "model,variant,trial,r2,power,fdr");
    assert_eq!(rows.len(), 1 + 2 * 2);
}

#[test]
fn external_predictor_matches_builtin_ridge() {
    let dir = TempDir::new().unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(12);
    let mut text = String::from("x0,x1,x2,x3,x4,x5,x6,x7,x8,x9,y\n");
    for _ in 0..50 {
        let x: Vec<f64> = (0..10).map(|_| StandardNormal.sample(&mut r)).collect();
        let noise: f64 = StandardNormal.sample(&mut r);
        for v in &x {
            write!(text, "{v},").unwrap();
        }
        writeln!(text, "{}", x[0] - x[1] + 0.5 * x[2] + noise).unwrap();
    }
    let input = dir.path().join("toy.csv");
    fs::write(&input, text).unwrap();
    let builtin = run_to(&base_args(&input), &dir.path().join("builtin.json"));
    let mut args = base_args(&input);
    let pos = args.iter().position(|a| a == "--model").unwrap();
    args.drain(pos..pos + 2);
    args.extend(["--external-cmd".into(), env!("CARGO_BIN_EXE_hrt-ridge-worker").into()]);
    let external = run_to(&args, &dir.path().join("external.json"));
    let pairs = builtin["features"].as_array().unwrap().iter().zip(external["features"].as_array().unwrap());
    for (a, b) in pairs {
        let (pa, pb) = (a["p_value"].as_f64().unwrap(), b["p_value"].as_f64().unwrap());
        assert!((pa - pb).abs() <= 0.02, "{}: {pa} vs {pb}", a["name"]);
    }
}
