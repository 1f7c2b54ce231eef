//! Multiple-testing selection: Benjamini–Hochberg over p-values, and a
//! knockoff-style filter over empirical-risk changes.
//!
//! The risk-change filter is a heuristic. Its statistics are not valid
//! knockoff statistics, so it carries no false discovery rate guarantee.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{HrtError, Result};
use crate::hrt::{risk_change, FeatureSampler, FittedPipeline, Scorer};
use crate::risk::RiskFunction;
use crate::rng::RngStream;

/// Caveat attached to every risk-change filter report.
pub const ERK_CAVEAT: &str =
    "erk_filter is a heuristic: risk-change statistics are not valid knockoff statistics and the selection has no FDR guarantee";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMethod {
    Bh,
    ErkFilter,
}

impl SelectionMethod {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "bh" => Ok(SelectionMethod::Bh),
            "erk" | "erk_filter" => Ok(SelectionMethod::ErkFilter),
            other => Err(HrtError::invalid(format!("unknown selection method `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SelectionMethod::Bh => "bh",
            SelectionMethod::ErkFilter => "erk_filter",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub method: SelectionMethod,
    pub alpha: f64,
    /// Indices into the input vector, ascending.
    pub discoveries: Vec<usize>,
    /// BH: the largest rejected p-value. Filter: `ω*`. `None` when nothing is selected.
    pub threshold: Option<f64>,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(HrtError::invalid(format!("target FDR must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// Benjamini–Hochberg step-up at level `alpha`.
pub fn bh(pvalues: &[f64], alpha: f64) -> Result<SelectionReport> {
    check_alpha(alpha)?;
    if pvalues.is_empty() {
        return Err(HrtError::invalid("BH needs at least one p-value"));
    }
    if let Some(bad) = pvalues.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
        return Err(HrtError::invalid(format!("p-value {bad} outside (0, 1]")));
    }
    let m = pvalues.len();
    let mut sorted = pvalues.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let cutoff = (1..=m)
        .rev()
        .find(|&k| sorted[k - 1] <= k as f64 * alpha / m as f64)
        .map(|k| sorted[k - 1]);
    let discoveries = match cutoff {
        Some(c) => (0..m).filter(|&i| pvalues[i] <= c).collect(),
        None => Vec::new(),
    };
    Ok(SelectionReport {
        method: SelectionMethod::Bh,
        alpha,
        discoveries,
        threshold: cutoff,
    })
}

/// Smallest `ω ∈ {0} ∪ {|w_j|}` with `(1 + #{w ≤ −ω}) / #{w ≥ ω} ≤ α`; `+∞` if none.
pub fn erk_threshold(w: &[f64], alpha: f64) -> Result<f64> {
    if w.iter().any(|v| !v.is_finite()) {
        return Err(HrtError::NonFinite { what: "risk-change statistics" });
    }
    let mut candidates: Vec<f64> = std::iter::once(0.0).chain(w.iter().map(|v| v.abs())).collect();
    candidates.sort_unstable_by(f64::total_cmp);
    candidates.dedup();
    for &omega in &candidates {
        let neg = w.iter().filter(|&&v| v <= -omega).count();
        let pos = w.iter().filter(|&&v| v >= omega).count();
        if pos > 0 && (1 + neg) as f64 / pos as f64 <= alpha {
            return Ok(omega);
        }
    }
    Ok(f64::INFINITY)
}

/// Applies [`erk_threshold`] and reports `{j : w_j ≥ ω*}`.
pub fn erk_select(w: &[f64], alpha: f64) -> Result<SelectionReport> {
    check_alpha(alpha)?;
    let omega = erk_threshold(w, alpha)?;
    let discoveries = if omega.is_finite() {
        (0..w.len()).filter(|&j| w[j] >= omega).collect()
    } else {
        Vec::new()
    };
    Ok(SelectionReport {
        method: SelectionMethod::ErkFilter,
        alpha,
        discoveries,
        threshold: omega.is_finite().then_some(omega),
    })
}

/// One-draw risk change `w_j = G(null-swapped) − t` per sampler's feature.
pub fn erk_statistics(
    pipeline: &FittedPipeline,
    data: &Dataset,
    samplers: &[FeatureSampler],
    risk: RiskFunction,
    rng: &RngStream,
) -> Result<Vec<f64>> {
    samplers
        .par_iter()
        .map(|s| {
            let j = s.feature();
            let stream = rng.feature(j);
            let out = match pipeline {
                FittedPipeline::Holdout { model, test, .. } => {
                    let scorer = Scorer::holdout(model, test, j, risk)?;
                    risk_change(&scorer, &s.as_sampler(), test.features(), &stream)
                }
                FittedPipeline::Cv(cv) => {
                    let scorer = Scorer::cross_validated(cv, data, j, risk)?;
                    risk_change(&scorer, &s.as_sampler(), data.features(), &stream)
                }
            };
            out.map_err(|e| e.in_feature(j))
        })
        .collect()
}
