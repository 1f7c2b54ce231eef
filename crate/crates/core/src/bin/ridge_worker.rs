//! Ridge regressor speaking the external-predictor line protocol on stdio.
//!
//! `--penalty L` sets the ridge penalty (default 1). The environment variable
//! `HRT_WORKER_FAULT` injects failures for testing the client:
//! `crash` exits on the first request, `malformed` replies with invalid JSON,
//! `hang` never replies, `error` answers every request with `ok:false`, and
//! `crash_on_predict` exits on the first predict.

use std::io::{self, BufRead, Write};

use hrt_core::data::Dataset;
use hrt_core::models::{fit, FittedPredictor, PredictorSpec};
use hrt_core::rng::RngStream;
use ndarray::{Array1, Array2};
use serde::Deserialize;
use serde_json::json;

#[derive(Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case")]
enum Request {
    Fit { x: Vec<Vec<f64>>, y: Vec<f64>, seed: u64 },
    Predict { x: Vec<Vec<f64>> },
    Shutdown,
}

fn matrix(rows: &[Vec<f64>]) -> Result<Array2<f64>, String> {
    let p = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != p) {
        return Err("ragged matrix".into());
    }
    Array2::from_shape_vec((rows.len(), p), rows.concat()).map_err(|e| e.to_string())
}

fn penalty_from_args() -> f64 {
    let args: Vec<String> = std::env::args().collect();
    args.iter()
        .position(|a| a == "--penalty")
        .and_then(|i| args.get(i + 1))
        .and_then(|v| v.parse().ok())
        .unwrap_or(1.0)
}

fn main() {
    let fault = std::env::var("HRT_WORKER_FAULT").unwrap_or_default();
    let spec = PredictorSpec::Ridge {
        penalty: Some(penalty_from_args()),
        inner_folds: 5,
    };
    let stdin = io::stdin();
    let mut out = io::stdout().lock();
    let mut model: Option<FittedPredictor> = None;
    for line in stdin.lock().lines() {
        let Ok(line) = line else { return };
        match fault.as_str() {
            "crash" => std::process::exit(3),
            "hang" => loop {
                std::thread::park();
            },
            _ => {}
        }
        let request: Request = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                let _ = writeln!(out, "{}", json!({"ok": false, "error": format!("bad request: {e}")}));
                let _ = out.flush();
                continue;
            }
        };
        let reply = if fault == "malformed" {
            "{not json".to_string()
        } else if fault == "error" {
            json!({"ok": false, "error": "injected failure"}).to_string()
        } else {
            match request {
                Request::Shutdown => return,
                Request::Fit { x, y, seed } => {
                    let fitted = matrix(&x)
                        .and_then(|x| Dataset::from_arrays(x, Array1::from(y)).map_err(|e| e.to_string()))
                        .and_then(|d| fit(&spec, &d, &RngStream::new(seed)).map_err(|e| e.to_string()));
                    match fitted {
                        Ok(m) => {
                            model = Some(m);
                            json!({"ok": true}).to_string()
                        }
                        Err(e) => json!({"ok": false, "error": e}).to_string(),
                    }
                }
                Request::Predict { x } => {
                    if fault == "crash_on_predict" {
                        std::process::exit(4);
                    }
                    let yhat = match &model {
                        None => Err("predict before fit".to_string()),
                        Some(m) => matrix(&x).and_then(|x| m.predict(x.view()).map_err(|e| e.to_string())),
                    };
                    match yhat {
                        Ok(v) => json!({"ok": true, "yhat": v.to_vec()}).to_string(),
                        Err(e) => json!({"ok": false, "error": e}).to_string(),
                    }
                }
            }
        };
        if writeln!(out, "{reply}").and_then(|_| out.flush()).is_err() {
            return;
        }
    }
}
