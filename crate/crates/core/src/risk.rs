use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::error::{HrtError, Result};

/// Per-sample loss `g(x, y, ŷ)`. The built-ins ignore `x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskFunction {
    #[default]
    SquaredError,
    AbsoluteError,
}

impl RiskFunction {
    #[inline]
    pub fn sample(self, y: f64, yhat: f64) -> f64 {
        match self {
            RiskFunction::SquaredError => (y - yhat) * (y - yhat),
            RiskFunction::AbsoluteError => (y - yhat).abs(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RiskFunction::SquaredError => "squared_error",
            RiskFunction::AbsoluteError => "absolute_error",
        }
    }

    /// Mean per-sample risk without validation; the hot path for null draws.
    #[inline]
    pub(crate) fn mean(self, y: &[f64], yhat: &[f64]) -> f64 {
        debug_assert_eq!(y.len(), yhat.len());
        let s: f64 = y.iter().zip(yhat).map(|(&a, &b)| self.sample(a, b)).sum();
        s / y.len() as f64
    }
}

/// Arithmetic mean of per-sample risks.
pub fn empirical_risk(
    predictions: ArrayView1<'_, f64>,
    response: ArrayView1<'_, f64>,
    risk: RiskFunction,
) -> Result<f64> {
    if predictions.len() != response.len() {
        return Err(HrtError::LengthMismatch {
            what: "predictions",
            expected: response.len(),
            got: predictions.len(),
        });
    }
    if response.is_empty() {
        return Err(HrtError::invalid("empirical risk over zero samples"));
    }
    if predictions.iter().any(|v| !v.is_finite()) {
        return Err(HrtError::NonFinite { what: "predictions" });
    }
    if response.iter().any(|v| !v.is_finite()) {
        return Err(HrtError::NonFinite { what: "response" });
    }
    let s: f64 = predictions
        .iter()
        .zip(response.iter())
        .map(|(&yhat, &y)| risk.sample(y, yhat))
        .sum();
    Ok(s / response.len() as f64)
}
