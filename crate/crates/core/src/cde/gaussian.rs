use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{HrtError, Result};
use crate::linalg::spd_inverse;

/// Linear-Gaussian complete conditional `x_j | x_{−j} ~ N(a + x_{−j}·c, s²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianConditional {
    pub intercept: f64,
    pub coef: Array1<f64>,
    pub sd: f64,
}

impl GaussianConditional {
    pub fn mean(&self, x_minus_j: ArrayView2<'_, f64>) -> Array1<f64> {
        let mut m = x_minus_j.dot(&self.coef);
        m += self.intercept;
        m
    }

    /// Exact conditional of column `j` under a joint `N(μ, Σ)`.
    pub fn from_joint(mean: ArrayView1<'_, f64>, cov: ArrayView2<'_, f64>, j: usize) -> Result<Self> {
        let p = mean.len();
        if cov.dim() != (p, p) || j >= p {
            return Err(HrtError::invalid("mean/covariance shapes disagree with target column"));
        }
        let precision = spd_inverse(cov)?;
        let tjj = precision[[j, j]];
        if !(tjj > 0.0 && tjj.is_finite()) {
            return Err(HrtError::Singular("conditional variance is not positive".into()));
        }
        let coef: Array1<f64> = (0..p)
            .filter(|&k| k != j)
            .map(|k| -precision[[j, k]] / tjj)
            .collect();
        let mu_rest: Array1<f64> = (0..p).filter(|&k| k != j).map(|k| mean[k]).collect();
        Ok(GaussianConditional {
            intercept: mean[j] - coef.dot(&mu_rest),
            coef,
            sd: (1.0 / tjj).sqrt(),
        })
    }
}

/// Sample mean and shrunk covariance `(1−γ)Σ̂ + γ·diag(Σ̂)`.
pub(crate) fn shrunk_moments(x: ArrayView2<'_, f64>, shrinkage: f64) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = x.nrows();
    if n < 2 {
        return Err(HrtError::invalid("need at least 2 rows to estimate a covariance"));
    }
    let mean = x.mean_axis(Axis(0)).expect("nonempty");
    let centered = &x - &mean;
    let mut cov = centered.t().dot(&centered) / (n as f64 - 1.0);
    for c in 0..cov.nrows() {
        if !(cov[[c, c]] > 1e-12 * (1.0 + mean[c] * mean[c])) {
            return Err(HrtError::DegenerateColumn { column: c });
        }
    }
    let p = cov.nrows();
    for a in 0..p {
        for b in 0..p {
            if a != b {
                cov[[a, b]] *= 1.0 - shrinkage;
            }
        }
    }
    Ok((mean, cov))
}
