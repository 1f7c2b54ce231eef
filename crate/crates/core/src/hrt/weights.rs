use serde::{Deserialize, Serialize};

use crate::error::{HrtError, Result};

/// How per-sample density ratios combine into one importance weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightAggregation {
    /// `(Π band_i / q_i)^{1/n}`; numerically tame for large `n`.
    #[default]
    GeometricMean,
    /// `Π band_i / q_i`; the exact joint density ratio.
    Product,
}

impl WeightAggregation {
    /// Turns a sum of log ratios over `n` samples into a weight.
    #[inline]
    pub(crate) fn finish(self, log_sum: f64, n: usize) -> f64 {
        match self {
            WeightAggregation::GeometricMean => (log_sum / n as f64).exp(),
            WeightAggregation::Product => log_sum.exp(),
        }
    }
}

/// `(1 + Σ 1{t ≥ t̃_k}·W_k) / (1 + Σ W_k)`.
pub fn weighted_pvalue(t: f64, nulls: &[f64], weights: &[f64]) -> Result<f64> {
    if nulls.len() != weights.len() {
        return Err(HrtError::LengthMismatch {
            what: "weights",
            expected: nulls.len(),
            got: weights.len(),
        });
    }
    if !t.is_finite() || nulls.iter().any(|v| !v.is_finite()) {
        return Err(HrtError::NonFinite { what: "risks" });
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(HrtError::invalid("weights must be finite and non-negative"));
    }
    let mut hit = 0.0;
    let mut total = 0.0;
    for (&null, &w) in nulls.iter().zip(weights) {
        if t >= null {
            hit += w;
        }
        total += w;
    }
    Ok((1.0 + hit) / (1.0 + total))
}

/// Upper band when the null sample beat or tied the observed risk, lower band
/// otherwise, relative to the proposal: `(Π band_i / proposal_i)^{1/n}`.
pub fn conservative_weight(lower: &[f64], upper: &[f64], proposal: &[f64], indicator: bool) -> Result<f64> {
    let n = proposal.len();
    if lower.len() != n || upper.len() != n {
        return Err(HrtError::LengthMismatch {
            what: "band",
            expected: n,
            got: if lower.len() != n { lower.len() } else { upper.len() },
        });
    }
    if n == 0 {
        return Err(HrtError::invalid("importance weight over zero samples"));
    }
    let band = if indicator { upper } else { lower };
    let mut log_sum = 0.0;
    for (i, (&b, &q)) in band.iter().zip(proposal).enumerate() {
        if !(q > 0.0) {
            return Err(HrtError::ZeroProposalDensity { index: i });
        }
        if !(lower[i] >= 0.0 && upper[i] >= 0.0) {
            return Err(HrtError::invalid("band densities must be non-negative"));
        }
        log_sum += (b / q).ln();
    }
    Ok(WeightAggregation::GeometricMean.finish(log_sum, n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formula_examples() {
        assert_eq!(weighted_pvalue(1.0, &[0.5, 2.0], &[2.0, 1.0]).unwrap(), 0.75);
        assert_eq!(weighted_pvalue(5.0, &[0.5, 2.0], &[2.0, 1.0]).unwrap(), 1.0);
        assert!(weighted_pvalue(1.0, &[0.5], &[-1.0]).is_err());
    }

    #[test]
    fn weight_examples() {
        let q = [0.3, 0.7];
        assert!((conservative_weight(&q, &q, &q, true).unwrap() - 1.0).abs() < 1e-15);
        assert!((conservative_weight(&q, &q, &q, false).unwrap() - 1.0).abs() < 1e-15);
        let w = conservative_weight(&[0.0, 0.0], &[4.0, 1.0], &[1.0, 1.0], true).unwrap();
        assert!((w - 2.0).abs() < 1e-12);
        assert_eq!(conservative_weight(&[0.0, 1.0], &[4.0, 1.0], &[1.0, 1.0], false).unwrap(), 0.0);
        assert!(matches!(
            conservative_weight(&[1.0], &[1.0], &[0.0], true),
            Err(HrtError::ZeroProposalDensity { index: 0 })
        ));
    }
}
