//! C ABI over `hrt-core`.
//!
//! Objects cross the boundary as opaque handles that the caller frees with the
//! matching `*_free` function. Every fallible call returns an [`HrtStatus`];
//! on failure, [`hrt_last_error`] describes the most recent error on the
//! calling thread. Panics are caught at the boundary and reported as
//! [`HrtStatus::Panic`].

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use hrt_core::data::Dataset;
use hrt_core::hrt::{run_hrt, FeatureResult, HrtConfig};
use hrt_core::models::PredictorSpec;
use ndarray::{Array1, Array2};
use hrt_core::rng::RngStream;
use hrt_core::HrtError;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HrtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Data = 3,
    Numerical = 4,
    External = 5,
    Io = 6,
    Panic = 7,
}

/// A feature matrix with its response.
pub struct HrtDataset(Dataset);

/// Completed per-feature test results.
pub struct HrtRun {
    results: Vec<FeatureResult>,
    r2: f64,
}

/// Summary of one tested feature.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HrtFeatureSummary {
    pub feature: usize,
    pub p_value: f64,
    /// Observed risk.
    pub t: f64,
    /// Null sample count.
    pub k: usize,
    pub weight_sum: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &HrtError) -> HrtStatus {
    match e {
        HrtError::Feature { source, .. } | HrtError::Fold { source, .. } | HrtError::Member { source, .. } => {
            status_of(source)
        }
        HrtError::InvalidArgument(_) | HrtError::LengthMismatch { .. } | HrtError::DimensionMismatch { .. } => {
            HrtStatus::InvalidArgument
        }
        HrtError::Data { .. } | HrtError::Csv(_) | HrtError::Json(_) | HrtError::DegenerateColumn { .. } => {
            HrtStatus::Data
        }
        HrtError::NonFinite { .. }
        | HrtError::Singular(_)
        | HrtError::Diverged(_)
        | HrtError::ZeroProposalDensity { .. } => HrtStatus::Numerical,
        HrtError::External(_) => HrtStatus::External,
        HrtError::Io(_) => HrtStatus::Io,
    }
}

/// Runs `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (HrtStatus, String)>) -> HrtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            HrtStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            HrtStatus::Panic
        }
    }
}

fn core_err(e: HrtError) -> (HrtStatus, String) {
    (status_of(&e), e.to_string())
}

fn null_err(what: &str) -> (HrtStatus, String) {
    (HrtStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn slice<'a>(ptr: *const f64, len: usize, what: &str) -> Result<&'a [f64], (HrtStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null_err(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn string(ptr: *const c_char, what: &str) -> Result<String, (HrtStatus, String)> {
    if ptr.is_null() {
        return Err(null_err(what));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| (HrtStatus::InvalidArgument, format!("`{what}` is not valid UTF-8")))
}

/// Message of the last failed call on this thread, or null. Valid until the next call.
#[no_mangle]
pub extern "C" fn hrt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hrt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a dataset from a row-major `n × p` feature buffer and an `n`-vector response.
///
/// # Safety
/// `features` must point to `n * p` doubles, `response` to `n` doubles, and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hrt_dataset_new(
    features: *const f64,
    n: usize,
    p: usize,
    response: *const f64,
    out: *mut *mut HrtDataset,
) -> HrtStatus {
    guard(|| {
        if out.is_null() {
            return Err(null_err("out"));
        }
        let len = n
            .checked_mul(p)
            .ok_or_else(|| (HrtStatus::InvalidArgument, "n * p overflows".to_string()))?;
        let x = slice(features, len, "features")?;
        let y = slice(response, n, "response")?;
        let x = Array2::from_shape_vec((n, p), x.to_vec()).map_err(|e| (HrtStatus::InvalidArgument, e.to_string()))?;
        let ds = Dataset::from_arrays(x, Array1::from(y.to_vec())).map_err(core_err)?;
        *out = Box::into_raw(Box::new(HrtDataset(ds)));
        Ok(())
    })
}

/// Loads a CSV with a header row; `response` names the target column.
///
/// # Safety
/// `path` and `response` must be NUL-terminated strings and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hrt_dataset_from_csv(
    path: *const c_char,
    response: *const c_char,
    out: *mut *mut HrtDataset,
) -> HrtStatus {
    guard(|| {
        if out.is_null() {
            return Err(null_err("out"));
        }
        let path = string(path, "path")?;
        let response = string(response, "response")?;
        let ds = Dataset::from_csv_path(path, &response, &BTreeMap::new()).map_err(core_err)?;
        *out = Box::into_raw(Box::new(HrtDataset(ds)));
        Ok(())
    })
}

/// Number of rows, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn hrt_dataset_n_samples(ds: *const HrtDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.n_samples())
}

/// Number of feature columns, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn hrt_dataset_n_features(ds: *const HrtDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.n_features())
}

/// Releases a dataset; null is ignored.
///
/// # Safety
/// `ds` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hrt_dataset_free(ds: *mut HrtDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Tests every feature. `model_json` and `config_json` hold a serialized
/// predictor spec and engine config; null selects the defaults (lasso, and
/// the default engine config).
///
/// # Safety
/// `ds` must be a live dataset handle, the JSON pointers null or NUL-terminated, and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hrt_run(
    ds: *const HrtDataset,
    model_json: *const c_char,
    config_json: *const c_char,
    seed: u64,
    out: *mut *mut HrtRun,
) -> HrtStatus {
    guard(|| {
        if out.is_null() {
            return Err(null_err("out"));
        }
        let ds = ds.as_ref().ok_or_else(|| null_err("ds"))?;
        let model: PredictorSpec = if model_json.is_null() {
            PredictorSpec::from_name("lasso").map_err(core_err)?
        } else {
            serde_json::from_str(&string(model_json, "model_json")?).map_err(|e| core_err(e.into()))?
        };
        let cfg: HrtConfig = if config_json.is_null() {
            HrtConfig::default()
        } else {
            serde_json::from_str(&string(config_json, "config_json")?).map_err(|e| core_err(e.into()))?
        };
        let run = run_hrt(&ds.0, &model, None, &cfg, &RngStream::new(seed)).map_err(core_err)?;
        *out = Box::into_raw(Box::new(HrtRun {
            r2: run.pipeline.r2(),
            results: run.results,
        }));
        Ok(())
    })
}

/// Number of tested features, or 0 for a null handle.
///
/// # Safety
/// `run` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn hrt_run_len(run: *const HrtRun) -> usize {
    run.as_ref().map_or(0, |r| r.results.len())
}

/// Predictor r² on held-out rows, or NaN for a null handle.
///
/// # Safety
/// `run` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn hrt_run_r2(run: *const HrtRun) -> f64 {
    run.as_ref().map_or(f64::NAN, |r| r.r2)
}

/// Copies the summary of the `index`-th tested feature into `out`.
///
/// # Safety
/// `run` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hrt_run_feature(run: *const HrtRun, index: usize, out: *mut HrtFeatureSummary) -> HrtStatus {
    guard(|| {
        let run = run.as_ref().ok_or_else(|| null_err("run"))?;
        if out.is_null() {
            return Err(null_err("out"));
        }
        let r = run.results.get(index).ok_or_else(|| {
            (
                HrtStatus::InvalidArgument,
                format!("index {index} out of range for {} results", run.results.len()),
            )
        })?;
        *out = HrtFeatureSummary {
            feature: r.feature,
            p_value: r.p_value,
            t: r.t,
            k: r.k(),
            weight_sum: r.diagnostics.weight_sum,
        };
        Ok(())
    })
}

/// Releases a run; null is ignored.
///
/// # Safety
/// `run` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hrt_run_free(run: *mut HrtRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Importance-weighted p-value `(1 + Σ 1{t ≥ t̃}·W) / (1 + Σ W)` over `k` nulls.
///
/// # Safety
/// `nulls` and `weights` must point to `k` doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hrt_weighted_pvalue(
    t: f64,
    nulls: *const f64,
    weights: *const f64,
    k: usize,
    out: *mut f64,
) -> HrtStatus {
    guard(|| {
        if out.is_null() {
            return Err(null_err("out"));
        }
        let nulls = slice(nulls, k, "nulls")?;
        let weights = slice(weights, k, "weights")?;
        *out = hrt_core::hrt::weighted_pvalue(t, nulls, weights).map_err(core_err)?;
        Ok(())
    })
}

/// Benjamini–Hochberg at level `alpha`; writes 1 into `selected[i]` for each discovery, 0 otherwise.
///
/// # Safety
/// `pvalues` must point to `m` doubles and `selected` to `m` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn hrt_bh(pvalues: *const f64, m: usize, alpha: f64, selected: *mut u8) -> HrtStatus {
    guard(|| {
        let p = slice(pvalues, m, "pvalues")?;
        if selected.is_null() && m > 0 {
            return Err(null_err("selected"));
        }
        let report = hrt_core::select::bh(p, alpha).map_err(core_err)?;
        let sel = std::slice::from_raw_parts_mut(selected, m);
        sel.fill(0);
        for i in report.discoveries {
            sel[i] = 1;
        }
        Ok(())
    })
}
