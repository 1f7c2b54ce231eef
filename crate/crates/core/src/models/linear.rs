use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{HrtError, Result};
use crate::linalg::{column_stats, spd_solve, standardize};
use crate::rng::RngStream;
use crate::split::{complement, make_folds};

/// `ŷ = x · coef + intercept`, in original feature units.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub coef: Array1<f64>,
    pub intercept: f64,
}

impl LinearModel {
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        let mut out = x.dot(&self.coef);
        out += self.intercept;
        out
    }

    /// Maps coefficients fitted on standardized columns and centered response
    /// back to original units.
    pub(crate) fn from_standardized(
        beta_std: &Array1<f64>,
        x_means: &Array1<f64>,
        x_scales: &Array1<f64>,
        y_mean: f64,
    ) -> Self {
        let coef = beta_std / x_scales;
        let intercept = y_mean - coef.dot(x_means);
        LinearModel { coef, intercept }
    }
}

pub(crate) struct Standardized {
    pub xs: Array2<f64>,
    pub yc: Array1<f64>,
    pub x_means: Array1<f64>,
    pub x_scales: Array1<f64>,
    pub y_mean: f64,
}

pub(crate) fn standardized(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>) -> Standardized {
    let (x_means, x_scales) = column_stats(x);
    let xs = standardize(x, &x_means, &x_scales);
    let y_mean = y.sum() / y.len() as f64;
    let yc = y.mapv(|v| v - y_mean);
    Standardized {
        xs,
        yc,
        x_means,
        x_scales,
        y_mean,
    }
}

fn ridge_standardized(s: &Standardized, penalty: f64) -> Result<Array1<f64>> {
    let mut gram = s.xs.t().dot(&s.xs);
    for i in 0..gram.nrows() {
        gram[[i, i]] += penalty;
    }
    let rhs = s.xs.t().dot(&s.yc);
    spd_solve(gram.view(), rhs.view())
}

pub(crate) fn fit_ols(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    ridge_fallback: bool,
) -> Result<LinearModel> {
    let s = standardized(x, y);
    let beta = match ridge_standardized(&s, 0.0) {
        Ok(b) => b,
        Err(e) if !ridge_fallback => return Err(e),
        Err(_) => {
            let jitter = 1e-8 * x.nrows() as f64;
            ridge_standardized(&s, jitter)
                .map_err(|_| HrtError::Singular("OLS normal equations singular even after ridge fallback".into()))?
        }
    };
    Ok(LinearModel::from_standardized(&beta, &s.x_means, &s.x_scales, s.y_mean))
}

/// Penalty grid searched when the ridge penalty is left unset.
const RIDGE_GRID: [f64; 13] = [
    1e-3, 3e-3, 1e-2, 3e-2, 0.1, 0.3, 1.0, 3.0, 10.0, 30.0, 100.0, 300.0, 1000.0,
];

/// Ridge on standardized columns: minimizes `‖y_c − X_s β‖² + λ‖β‖²`.
pub(crate) fn fit_ridge(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    penalty: Option<f64>,
    inner_folds: usize,
    rng: &RngStream,
) -> Result<LinearModel> {
    let lambda = match penalty {
        Some(l) => l,
        None => select_ridge_penalty(x, y, inner_folds, rng)?,
    };
    let s = standardized(x, y);
    let beta = ridge_standardized(&s, lambda)?;
    Ok(LinearModel::from_standardized(&beta, &s.x_means, &s.x_scales, s.y_mean))
}

fn select_ridge_penalty(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    inner_folds: usize,
    rng: &RngStream,
) -> Result<f64> {
    let n = x.nrows();
    let plan = make_folds(n, inner_folds.min(n), &rng.child(0x72_69_64))?;
    let folds = plan.folds().expect("fold plan");
    let mut cv_err = vec![0.0; RIDGE_GRID.len()];
    for fold in folds {
        let train = complement(n, fold);
        let xt = x.select(ndarray::Axis(0), &train);
        let yt = y.select(ndarray::Axis(0), &train);
        let xv = x.select(ndarray::Axis(0), fold);
        let yv = y.select(ndarray::Axis(0), fold);
        let s = standardized(xt.view(), yt.view());
        for (g, &lambda) in RIDGE_GRID.iter().enumerate() {
            let beta = ridge_standardized(&s, lambda)?;
            let m = LinearModel::from_standardized(&beta, &s.x_means, &s.x_scales, s.y_mean);
            let pred = m.predict(xv.view());
            cv_err[g] += (&pred - &yv).mapv(|d| d * d).sum();
        }
    }
    let best = cv_err
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(g, _)| g)
        .unwrap_or(0);
    Ok(RIDGE_GRID[best])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, p: usize, seed: u64) -> Array2<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((n, p), || StandardNormal.sample(&mut rng))
    }

    #[test]
    fn ols_exact_on_noiseless_data() {
        let x = gaussian(50, 2, 1);
        let y = x.column(0).mapv(|v| 2.0 * v) - &x.column(1);
        let m = fit_ols(x.view(), y.view(), true).unwrap();
        assert!((m.coef[0] - 2.0).abs() < 1e-8);
        assert!((m.coef[1] + 1.0).abs() < 1e-8);
        assert!(m.intercept.abs() < 1e-8);
        let resid = &m.predict(x.view()) - &y;
        assert!(resid.iter().all(|r| r.abs() < 1e-8));
    }

    #[test]
    fn ols_singular_without_fallback_errors() {
        let x = gaussian(20, 1, 2);
        let dup = ndarray::concatenate![ndarray::Axis(1), x, x];
        let y = x.column(0).to_owned();
        assert!(matches!(fit_ols(dup.view(), y.view(), false), Err(HrtError::Singular(_))));
        assert!(fit_ols(dup.view(), y.view(), true).is_ok());
    }

    #[test]
    fn ridge_matches_closed_form_and_shrinks() {
        let x = gaussian(40, 3, 3);
        let y = x.column(0).mapv(|v| 1.5 * v) + x.column(2).mapv(|v| -0.7 * v);
        let s = standardized(x.view(), y.view());
        let mut prev = f64::INFINITY;
        for &lambda in &[0.0, 0.5, 2.0, 10.0, 50.0, 500.0] {
            // Oracle: (XᵀX + λI)⁻¹ Xᵀy through nalgebra's general LU.
            let xs = crate::linalg::to_dmatrix(s.xs.view());
            let yc = crate::linalg::to_dvector(s.yc.view());
            let a = xs.transpose() * &xs + nalgebra::DMatrix::identity(3, 3) * lambda;
            let oracle = a.lu().solve(&(xs.transpose() * yc)).unwrap();
            let m = fit_ridge(x.view(), y.view(), Some(lambda), 5, &RngStream::new(0)).unwrap();
            let beta_std = &m.coef * &s.x_scales;
            for j in 0..3 {
                assert!((beta_std[j] - oracle[j]).abs() < 1e-9);
            }
            let norm = beta_std.dot(&beta_std).sqrt();
            assert!(norm <= prev + 1e-12);
            prev = norm;
        }
    }

    #[test]
    fn ridge_cv_penalty_is_deterministic() {
        let x = gaussian(60, 4, 4);
        let y = x.column(1).to_owned();
        let a = fit_ridge(x.view(), y.view(), None, 5, &RngStream::new(8)).unwrap();
        let b = fit_ridge(x.view(), y.view(), None, 5, &RngStream::new(8)).unwrap();
        assert_eq!(a, b);
    }
}
