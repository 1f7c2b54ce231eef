//! Lasso and elastic net by cyclic coordinate descent with warm-started
//! penalty paths and inner cross-validation.
//!
//! Objective on standardized columns and centered response:
//!
//! ```text
//! (1 / 2n) ‖y − Xβ‖² + λ (ρ ‖β‖₁ + (1 − ρ)/2 ‖β‖²)
//! ```
//!
//! Convergence is declared when the duality gap falls below `tol · ‖y‖²`
//! (gap measured on the `n`-scaled objective).

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::linear::{standardized, LinearModel};
use crate::error::{HrtError, Result};
use crate::rng::RngStream;
use crate::split::{complement, make_folds};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathConfig {
    pub inner_folds: usize,
    pub n_penalties: usize,
    /// Smallest penalty on the path as a fraction of the all-zero penalty.
    pub eps: f64,
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for PathConfig {
    fn default() -> Self {
        PathConfig {
            inner_folds: 5,
            n_penalties: 50,
            eps: 1e-3,
            tol: 1e-6,
            max_sweeps: 10_000,
        }
    }
}

impl PathConfig {
    pub(crate) fn validate(&self, searching: bool) -> Result<()> {
        if searching && self.inner_folds < 2 {
            return Err(HrtError::invalid("inner CV needs at least 2 folds"));
        }
        if searching && self.n_penalties < 1 {
            return Err(HrtError::invalid("penalty path needs at least one value"));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(HrtError::invalid("path eps must lie in (0, 1)"));
        }
        if !(self.tol > 0.0) || self.max_sweeps == 0 {
            return Err(HrtError::invalid("solver tolerance and sweep budget must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LassoConfig {
    /// `None` selects the penalty by inner cross-validation on the training set.
    pub penalty: Option<f64>,
    pub path: PathConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ElasticNetConfig {
    pub penalty: Option<f64>,
    /// Fixed L1 mixing ratio; `None` searches `l1_ratio_grid`.
    pub l1_ratio: Option<f64>,
    pub l1_ratio_grid: Vec<f64>,
    pub path: PathConfig,
}

impl Default for ElasticNetConfig {
    fn default() -> Self {
        ElasticNetConfig {
            penalty: None,
            l1_ratio: None,
            l1_ratio_grid: vec![0.1, 0.5, 0.7, 0.9, 0.95, 0.99, 1.0],
            path: PathConfig::default(),
        }
    }
}

impl ElasticNetConfig {
    pub(crate) fn validate(&self) -> Result<()> {
        if let Some(p) = self.penalty {
            if !(p >= 0.0 && p.is_finite()) {
                return Err(HrtError::invalid("elastic net penalty must be >= 0"));
            }
        }
        let ratios: Vec<f64> = match self.l1_ratio {
            Some(r) => vec![r],
            None => self.l1_ratio_grid.clone(),
        };
        if ratios.is_empty() || ratios.iter().any(|r| !(*r > 0.0 && *r <= 1.0)) {
            return Err(HrtError::invalid("l1 ratios must lie in (0, 1]"));
        }
        self.path
            .validate(self.penalty.is_none() || self.l1_ratio.is_none())
    }
}

/// Column-major copy of the standardized design, for contiguous column access.
struct Design {
    xt: Array2<f64>,
    col_sq: Array1<f64>,
    n: f64,
}

impl Design {
    fn new(xs: &Array2<f64>) -> Self {
        let xt = xs.t().as_standard_layout().to_owned();
        let n = xs.nrows() as f64;
        let col_sq = xt.rows().into_iter().map(|c| c.dot(&c) / n).collect();
        Design { xt, col_sq, n }
    }
}

#[inline]
fn soft_threshold(z: f64, g: f64) -> f64 {
    if z > g {
        z - g
    } else if z < -g {
        z + g
    } else {
        0.0
    }
}

/// Coordinate descent from the warm start in `beta`. Returns sweeps used.
fn coordinate_descent(
    d: &Design,
    y: &Array1<f64>,
    beta: &mut Array1<f64>,
    lambda: f64,
    l1_ratio: f64,
    tol: f64,
    max_sweeps: usize,
) -> usize {
    let p = beta.len();
    let mut resid = y - &d.xt.t().dot(beta);
    let l1 = lambda * l1_ratio;
    let l2 = lambda * (1.0 - l1_ratio);
    let y_norm2 = y.dot(y);
    if y_norm2 == 0.0 {
        beta.fill(0.0);
        return 0;
    }
    for sweep in 1..=max_sweeps {
        let mut max_change = 0.0f64;
        let mut max_beta = 0.0f64;
        for j in 0..p {
            let sq = d.col_sq[j];
            if sq == 0.0 {
                beta[j] = 0.0;
                continue;
            }
            let col = d.xt.row(j);
            let old = beta[j];
            let rho = col.dot(&resid) / d.n + sq * old;
            let new = soft_threshold(rho, l1) / (sq + l2);
            if new != old {
                resid.scaled_add(old - new, &col);
                beta[j] = new;
            }
            max_change = max_change.max((new - old).abs());
            max_beta = max_beta.max(new.abs());
        }
        if max_beta == 0.0 || max_change / max_beta < tol || sweep == max_sweeps {
            if duality_gap(d, y, beta, &resid, l1, l2) < tol * y_norm2 {
                return sweep;
            }
        }
    }
    max_sweeps
}

/// Duality gap of the `n`-scaled elastic net problem
/// `½‖r‖² + nλ₁‖β‖₁ + ½ nλ₂‖β‖²`.
fn duality_gap(d: &Design, y: &Array1<f64>, beta: &Array1<f64>, resid: &Array1<f64>, l1: f64, l2: f64) -> f64 {
    let alpha = l1 * d.n;
    let b = l2 * d.n;
    let mut xta = d.xt.dot(resid);
    xta.scaled_add(-b, beta);
    let dual_norm = xta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let r2 = resid.dot(resid);
    let w2 = beta.dot(beta);
    let (konst, mut gap) = if dual_norm > alpha {
        let c = alpha / dual_norm;
        (c, 0.5 * (r2 + r2 * c * c))
    } else {
        (1.0, r2)
    };
    let l1_norm: f64 = beta.iter().map(|v| v.abs()).sum();
    gap += alpha * l1_norm - konst * resid.dot(y) + 0.5 * b * (1.0 + konst * konst) * w2;
    gap
}

fn lambda_max(d: &Design, y: &Array1<f64>, l1_ratio: f64) -> f64 {
    let xty = d.xt.dot(y);
    let m = xty.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    m / (d.n * l1_ratio.max(1e-3))
}

fn penalty_grid(lmax: f64, cfg: &PathConfig) -> Vec<f64> {
    if lmax <= 0.0 {
        return vec![0.0];
    }
    let k = cfg.n_penalties.max(1);
    if k == 1 {
        return vec![lmax];
    }
    let lo = (lmax * cfg.eps).ln();
    let hi = lmax.ln();
    (0..k)
        .map(|i| (hi + (lo - hi) * i as f64 / (k - 1) as f64).exp())
        .collect()
}

/// Fits `penalties` in order (descending) with warm starts, handing each
/// solution to `visit`.
fn fit_path(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    penalties: &[f64],
    l1_ratio: f64,
    cfg: &PathConfig,
    mut visit: impl FnMut(usize, LinearModel),
) {
    let s = standardized(x, y);
    let d = Design::new(&s.xs);
    let mut beta = Array1::zeros(x.ncols());
    for (i, &lambda) in penalties.iter().enumerate() {
        coordinate_descent(&d, &s.yc, &mut beta, lambda, l1_ratio, cfg.tol, cfg.max_sweeps);
        visit(
            i,
            LinearModel::from_standardized(&beta, &s.x_means, &s.x_scales, s.y_mean),
        );
    }
}

fn fit_fixed(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    lambda: f64,
    l1_ratio: f64,
    cfg: &PathConfig,
) -> LinearModel {
    // Walk a short path down to the target so the solver is always warm.
    let s = standardized(x, y);
    let d = Design::new(&s.xs);
    let lmax = lambda_max(&d, &s.yc, l1_ratio);
    let mut beta = Array1::zeros(x.ncols());
    if lambda < lmax {
        let steps = 10;
        for i in 0..steps {
            let l = lmax * (lambda / lmax).powf(i as f64 / steps as f64);
            coordinate_descent(&d, &s.yc, &mut beta, l, l1_ratio, cfg.tol, cfg.max_sweeps);
        }
    }
    coordinate_descent(&d, &s.yc, &mut beta, lambda, l1_ratio, cfg.tol, cfg.max_sweeps);
    LinearModel::from_standardized(&beta, &s.x_means, &s.x_scales, s.y_mean)
}

/// Inner K-fold CV over `(l1_ratio, penalty)` restricted to the given rows.
/// Returns the pair with the lowest pooled validation MSE.
fn cross_validate(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    ratios: &[f64],
    fixed_penalty: Option<f64>,
    cfg: &PathConfig,
    rng: &RngStream,
) -> Result<(f64, f64)> {
    let n = x.nrows();
    let plan = make_folds(n, cfg.inner_folds.min(n), rng)?;
    let folds = plan.folds().expect("fold plan");
    let full = standardized(x, y);
    let full_design = Design::new(&full.xs);

    let mut best = (f64::INFINITY, ratios[0], 0.0);
    for &ratio in ratios {
        let grid = match fixed_penalty {
            Some(l) => vec![l],
            None => penalty_grid(lambda_max(&full_design, &full.yc, ratio), cfg),
        };
        let mut err = vec![0.0; grid.len()];
        for fold in folds {
            let train = complement(n, fold);
            let xt = x.select(Axis(0), &train);
            let yt = y.select(Axis(0), &train);
            let xv = x.select(Axis(0), fold);
            let yv = y.select(Axis(0), fold);
            fit_path(xt.view(), yt.view(), &grid, ratio, cfg, |i, m| {
                let pred = m.predict(xv.view());
                err[i] += pred
                    .iter()
                    .zip(yv.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>();
            });
        }
        for (i, e) in err.into_iter().enumerate() {
            if e < best.0 {
                best = (e, ratio, grid[i]);
            }
        }
    }
    Ok((best.1, best.2))
}

pub(crate) fn fit_lasso(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    cfg: &LassoConfig,
    rng: &RngStream,
) -> Result<LinearModel> {
    let lambda = match cfg.penalty {
        Some(l) => l,
        None => cross_validate(x, y, &[1.0], None, &cfg.path, &rng.child(0x6c61_7373))?.1,
    };
    Ok(fit_fixed(x, y, lambda, 1.0, &cfg.path))
}

pub(crate) fn fit_elastic_net(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    cfg: &ElasticNetConfig,
    rng: &RngStream,
) -> Result<LinearModel> {
    let (ratio, lambda) = match (cfg.l1_ratio, cfg.penalty) {
        (Some(r), Some(l)) => (r, l),
        (r, l) => {
            let ratios = match r {
                Some(r) => vec![r],
                None => cfg.l1_ratio_grid.clone(),
            };
            cross_validate(x, y, &ratios, l, &cfg.path, &rng.child(0x656e_6574))?
        }
    };
    Ok(fit_fixed(x, y, lambda, ratio, &cfg.path))
}
