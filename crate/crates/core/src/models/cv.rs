use ndarray::{Array1, ArrayView1, Axis};
use rayon::prelude::*;

use super::{fit_arrays, FittedPredictor, PredictorSpec};
use crate::data::Dataset;
use crate::error::{HrtError, Result};
use crate::risk::RiskFunction;
use crate::rng::{Purpose, RngStream};
use crate::split::{complement, make_folds, SplitPlan};

/// M-fold cross-validated fit: one model per fold, each trained on the other folds.
#[derive(Debug)]
pub struct CvFit {
    pub plan: SplitPlan,
    pub models: Vec<FittedPredictor>,
    /// Held-out prediction for every sample, from the model that did not see it.
    pub oof_predictions: Array1<f64>,
    pub fold_risks: Vec<f64>,
    /// Mean of the per-fold held-out risks.
    pub risk: f64,
    /// Out-of-fold coefficient of determination.
    pub r2: f64,
}

impl CvFit {
    pub fn folds(&self) -> &[Vec<usize>] {
        self.plan.folds().expect("cv plan is a fold plan")
    }
}

/// `1 − SSE / SST`; `SST` is taken around the mean of `y`.
pub fn r_squared(y: ArrayView1<'_, f64>, yhat: ArrayView1<'_, f64>) -> f64 {
    let mean = y.sum() / y.len() as f64;
    let sse: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
    let sst: f64 = y.iter().map(|a| (a - mean) * (a - mean)).sum();
    if sst > 0.0 {
        1.0 - sse / sst
    } else if sse == 0.0 {
        1.0
    } else {
        f64::NEG_INFINITY
    }
}

pub fn cv_fit(
    spec: &PredictorSpec,
    data: &Dataset,
    folds: usize,
    risk: RiskFunction,
    rng: &RngStream,
) -> Result<CvFit> {
    let plan = make_folds(data.n_samples(), folds, &rng.purpose(Purpose::Split))?;
    cv_fit_with_plan(spec, data, plan, risk, rng)
}

pub fn cv_fit_with_plan(
    spec: &PredictorSpec,
    data: &Dataset,
    plan: SplitPlan,
    risk: RiskFunction,
    rng: &RngStream,
) -> Result<CvFit> {
    spec.validate()?;
    let n = data.n_samples();
    plan.validate(n)?;
    let folds = plan
        .folds()
        .ok_or_else(|| HrtError::invalid("cross-validation needs a fold plan"))?
        .to_vec();
    let x = data.features();
    let y = data.response();
    let fit_rng = rng.purpose(Purpose::Fit);

    let fitted: Vec<(FittedPredictor, Array1<f64>)> = folds
        .par_iter()
        .enumerate()
        .map(|(m, fold)| {
            let train = complement(n, fold);
            let xt = x.select(Axis(0), &train);
            let yt = y.select(Axis(0), &train);
            let model = fit_arrays(spec, xt.view(), yt.view(), &fit_rng.child(m as u64))
                .map_err(|e| e.in_fold(m))?;
            let pred = model
                .predict(x.select(Axis(0), fold).view())
                .map_err(|e| e.in_fold(m))?;
            Ok((model, pred))
        })
        .collect::<Result<_>>()?;

    let mut oof = Array1::zeros(n);
    let mut fold_risks = Vec::with_capacity(folds.len());
    let mut models = Vec::with_capacity(folds.len());
    for (fold, (model, pred)) in folds.iter().zip(fitted) {
        let yf: Vec<f64> = fold.iter().map(|&i| y[i]).collect();
        fold_risks.push(risk.mean(&yf, pred.as_slice().expect("contiguous")));
        for (&i, &p) in fold.iter().zip(pred.iter()) {
            oof[i] = p;
        }
        models.push(model);
    }
    let t = fold_risks.iter().sum::<f64>() / fold_risks.len() as f64;
    let r2 = r_squared(y, oof.view());
    Ok(CvFit {
        plan,
        models,
        oof_predictions: oof,
        fold_risks,
        risk: t,
        r2,
    })
}
