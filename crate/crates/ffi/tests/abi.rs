use std::ffi::{CStr, CString};
use std::ptr;

use hrt_ffi::*;

fn last_error() -> String {
    let p = hrt_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn toy(n: usize, p: usize) -> (Vec<f64>, Vec<f64>) {
    // Deterministic pseudo-random design; response depends on column 0 only.
    let mut state = 12345u64;
    let mut next = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
    };
    let x: Vec<f64> = (0..n * p).map(|_| next()).collect();
    let y: Vec<f64> = (0..n).map(|i| 3.0 * x[i * p] + 0.1 * next()).collect();
    (x, y)
}

#[test]
fn version_is_nonempty() {
    let v = unsafe { CStr::from_ptr(hrt_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn dataset_lifecycle_and_errors() {
    let (x, y) = toy(40, 3);
    let mut ds = ptr::null_mut();
    let st = unsafe { hrt_dataset_new(x.as_ptr(), 40, 3, y.as_ptr(), &mut ds) };
    assert_eq!(st, HrtStatus::Ok);
    assert!(hrt_last_error().is_null());
    unsafe {
        assert_eq!(hrt_dataset_n_samples(ds), 40);
        assert_eq!(hrt_dataset_n_features(ds), 3);
        hrt_dataset_free(ds);
        hrt_dataset_free(ptr::null_mut());
        assert_eq!(hrt_dataset_n_samples(ptr::null()), 0);
    }

    let mut ds = ptr::null_mut();
    let st = unsafe { hrt_dataset_new(ptr::null(), 4, 3, y.as_ptr(), &mut ds) };
    assert_eq!(st, HrtStatus::NullPointer);
    assert!(last_error().contains("features"));

    let bad = [1.0, f64::NAN, 2.0, 3.0];
    let st = unsafe { hrt_dataset_new(bad.as_ptr(), 2, 2, [0.0, 1.0].as_ptr(), &mut ds) };
    assert_eq!(st, HrtStatus::Data);

    let path = CString::new("/nonexistent/data.csv").unwrap();
    let resp = CString::new("y").unwrap();
    let st = unsafe { hrt_dataset_from_csv(path.as_ptr(), resp.as_ptr(), &mut ds) };
    assert_eq!(st, HrtStatus::Io);
}

#[test]
fn csv_loading() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    std::fs::write(&path, "a,b,y\n1,2,3\n4,5,6\n").unwrap();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let resp = CString::new("y").unwrap();
    let mut ds = ptr::null_mut();
    let st = unsafe { hrt_dataset_from_csv(cpath.as_ptr(), resp.as_ptr(), &mut ds) };
    assert_eq!(st, HrtStatus::Ok);
    unsafe {
        assert_eq!(hrt_dataset_n_features(ds), 2);
        hrt_dataset_free(ds);
    }
}

#[test]
fn run_detects_signal() {
    let (x, y) = toy(120, 4);
    let mut ds = ptr::null_mut();
    assert_eq!(unsafe { hrt_dataset_new(x.as_ptr(), 120, 4, y.as_ptr(), &mut ds) }, HrtStatus::Ok);
    let model = CString::new(r#"{"family":"ridge","penalty":1.0}"#).unwrap();
    let cfg = CString::new(
        r#"{"nsamples":99,"mode":"basic","calibration":{"kind":"off"},"cde":{"kind":"gaussian_joint"}}"#,
    )
    .unwrap();
    let mut run = ptr::null_mut();
    let st = unsafe { hrt_run(ds, model.as_ptr(), cfg.as_ptr(), 7, &mut run) };
    assert_eq!(st, HrtStatus::Ok, "{}", if st == HrtStatus::Ok { String::new() } else { last_error() });
    unsafe {
        assert_eq!(hrt_run_len(run), 4);
        assert!(hrt_run_r2(run) > 0.9);
        let mut s = HrtFeatureSummary {
            feature: 0,
            p_value: 0.0,
            t: 0.0,
            k: 0,
            weight_sum: 0.0,
        };
        assert_eq!(hrt_run_feature(run, 0, &mut s), HrtStatus::Ok);
        assert_eq!(s.feature, 0);
        assert_eq!(s.k, 99);
        assert!((s.p_value - 0.01).abs() < 1e-12);
        assert_eq!(hrt_run_feature(run, 4, &mut s), HrtStatus::InvalidArgument);
        hrt_run_free(run);
        hrt_dataset_free(ds);
    }
}

#[test]
fn bad_json_is_reported() {
    let (x, y) = toy(30, 3);
    let mut ds = ptr::null_mut();
    unsafe { hrt_dataset_new(x.as_ptr(), 30, 3, y.as_ptr(), &mut ds) };
    let model = CString::new("{not json").unwrap();
    let mut run = ptr::null_mut();
    let st = unsafe { hrt_run(ds, model.as_ptr(), ptr::null(), 1, &mut run) };
    assert_eq!(st, HrtStatus::Data);
    assert!(run.is_null());
    unsafe { hrt_dataset_free(ds) };
}

#[test]
fn pvalue_and_bh() {
    let mut p = 0.0;
    let st = unsafe { hrt_weighted_pvalue(1.0, [0.5, 2.0].as_ptr(), [2.0, 1.0].as_ptr(), 2, &mut p) };
    assert_eq!(st, HrtStatus::Ok);
    assert_eq!(p, 0.75);
    let st = unsafe { hrt_weighted_pvalue(1.0, [0.5].as_ptr(), [-1.0].as_ptr(), 1, &mut p) };
    assert_eq!(st, HrtStatus::InvalidArgument);

    let mut sel = [9u8; 3];
    let st = unsafe { hrt_bh([0.001, 0.02, 0.8].as_ptr(), 3, 0.1, sel.as_mut_ptr()) };
    assert_eq!(st, HrtStatus::Ok);
    assert_eq!(sel, [1, 1, 0]);
    let st = unsafe { hrt_bh([0.5].as_ptr(), 1, 1.5, sel.as_mut_ptr()) };
    assert_eq!(st, HrtStatus::InvalidArgument);
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/hrt.h")).unwrap();
    for name in [
        "hrt_last_error",
        "hrt_version",
        "hrt_dataset_new",
        "hrt_dataset_from_csv",
        "hrt_dataset_n_samples",
        "hrt_dataset_n_features",
        "hrt_dataset_free",
        "hrt_run",
        "hrt_run_len",
        "hrt_run_r2",
        "hrt_run_feature",
        "hrt_run_free",
        "hrt_weighted_pvalue",
        "hrt_bh",
        "HRT_STATUS_PANIC",
        "typedef struct HrtDataset HrtDataset",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(status) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", "-"])
        .arg(format!("-I{}/include", env!("CARGO_MANIFEST_DIR")))
        .stdin(std::process::Stdio::piped())
        .spawn()
        .and_then(|mut child| {
            use std::io::Write;
            child.stdin.take().unwrap().write_all(b"#include \"hrt.h\"\nint main(void) { return hrt_version() == 0; }\n")?;
            child.wait()
        })
    else {
        eprintln!("no C compiler; skipping");
        return;
    };
    assert!(status.success());
}
