//! Conditional density estimation of a feature's complete conditional
//! `x_j | x_{−j}`: fitting, sampling, densities, and bootstrap ensembles with
//! pointwise quantile bands.

mod discrete;
mod dist;
mod gaussian;
mod mdn;

use ndarray::{Array1, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{drop_column, Dataset, FeatureKind};
use crate::error::{HrtError, Result};
use crate::rng::{Purpose, RngStream};

pub use discrete::DiscreteConfig;
pub use dist::Conditional;
pub use gaussian::GaussianConditional;
pub use mdn::MdnConfig;

use discrete::SoftmaxConditional;
use mdn::Mdn;

/// Estimator family for a complete conditional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CdeSpec {
    /// Exact conditional of a jointly Gaussian fit with diagonal shrinkage.
    GaussianJoint {
        #[serde(default = "default_shrinkage")]
        shrinkage: f64,
    },
    Mdn(MdnConfig),
    EmpiricalDiscrete(DiscreteConfig),
}

fn default_shrinkage() -> f64 {
    0.01
}

impl Default for CdeSpec {
    fn default() -> Self {
        CdeSpec::Mdn(MdnConfig::default())
    }
}

impl CdeSpec {
    pub fn gaussian() -> Self {
        CdeSpec::GaussianJoint {
            shrinkage: default_shrinkage(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CdeSpec::GaussianJoint { .. } => "gaussian_joint",
            CdeSpec::Mdn(_) => "mdn",
            CdeSpec::EmpiricalDiscrete(_) => "empirical_discrete",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            CdeSpec::GaussianJoint { shrinkage } => {
                if !(0.0..=1.0).contains(shrinkage) {
                    return Err(HrtError::invalid("covariance shrinkage must lie in [0, 1]"));
                }
                Ok(())
            }
            CdeSpec::Mdn(c) => c.validate(),
            CdeSpec::EmpiricalDiscrete(c) => c.validate(),
        }
    }
}

#[derive(Debug, Clone)]
enum Estimator {
    Gaussian(GaussianConditional),
    Mdn(Mdn),
    Discrete(SoftmaxConditional),
}

/// A fitted estimate of `P(x_j | x_{−j})`. Immutable and shareable across threads.
#[derive(Debug, Clone)]
pub struct ConditionalModel {
    target: usize,
    n_features: usize,
    estimator: Estimator,
}

impl ConditionalModel {
    /// Wraps a known linear-Gaussian conditional for feature `target` of `n_features`.
    pub fn from_gaussian(target: usize, n_features: usize, g: GaussianConditional) -> Result<Self> {
        if target >= n_features || g.coef.len() + 1 != n_features {
            return Err(HrtError::invalid("Gaussian conditional shape disagrees with feature count"));
        }
        if !(g.sd > 0.0 && g.sd.is_finite()) {
            return Err(HrtError::invalid("Gaussian conditional needs a positive finite sd"));
        }
        Ok(ConditionalModel {
            target,
            n_features,
            estimator: Estimator::Gaussian(g),
        })
    }

    pub fn target(&self) -> usize {
        self.target
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn kind_name(&self) -> &'static str {
        match self.estimator {
            Estimator::Gaussian(_) => "gaussian_joint",
            Estimator::Mdn(_) => "mdn",
            Estimator::Discrete(_) => "empirical_discrete",
        }
    }

    pub fn gaussian(&self) -> Option<&GaussianConditional> {
        match &self.estimator {
            Estimator::Gaussian(g) => Some(g),
            _ => None,
        }
    }

    /// Row-wise conditionals given `x_{−j}` (width `p − 1`).
    pub fn conditional_given(&self, x_minus_j: ArrayView2<'_, f64>) -> Result<Conditional> {
        if x_minus_j.ncols() + 1 != self.n_features {
            return Err(HrtError::DimensionMismatch {
                expected: self.n_features - 1,
                got: x_minus_j.ncols(),
            });
        }
        Ok(match &self.estimator {
            Estimator::Gaussian(g) => {
                let n = x_minus_j.nrows();
                let mean = g.mean(x_minus_j);
                Conditional::Mixture {
                    weights: ndarray::Array2::ones((n, 1)),
                    means: mean.insert_axis(Axis(1)),
                    sds: ndarray::Array2::from_elem((n, 1), g.sd),
                }
            }
            Estimator::Mdn(m) => m.conditional(x_minus_j),
            Estimator::Discrete(d) => d.conditional(x_minus_j),
        })
    }

    /// Row-wise conditionals given full-width rows; column `j` is ignored.
    pub fn conditional(&self, x: ArrayView2<'_, f64>) -> Result<Conditional> {
        if x.ncols() != self.n_features {
            return Err(HrtError::DimensionMismatch {
                expected: self.n_features,
                got: x.ncols(),
            });
        }
        self.conditional_given(drop_column(x, self.target).view())
    }

    /// One independent draw of `x_j` per row of `x_{−j}`.
    pub fn sample<R: Rng + ?Sized>(&self, x_minus_j: ArrayView2<'_, f64>, rng: &mut R) -> Result<Array1<f64>> {
        Ok(Array1::from(self.conditional_given(x_minus_j)?.sample(rng)))
    }

    /// Per-row density (or mass) of `x_j` given `x_{−j}`.
    pub fn density(&self, x_j: ArrayView1<'_, f64>, x_minus_j: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        if x_j.len() != x_minus_j.nrows() {
            return Err(HrtError::LengthMismatch {
                what: "x_j",
                expected: x_minus_j.nrows(),
                got: x_j.len(),
            });
        }
        let c = self.conditional_given(x_minus_j)?;
        Ok(x_j.iter().enumerate().map(|(i, &v)| c.density(i, v)).collect())
    }
}

/// Fits the complete conditional of column `j` of `data`.
pub fn fit_conditional(data: &Dataset, j: usize, spec: &CdeSpec, rng: &RngStream) -> Result<ConditionalModel> {
    if j >= data.n_features() {
        return Err(HrtError::invalid(format!("feature index {j} out of range")));
    }
    fit_conditional_arrays(data.features(), j, data.kind(j), spec, rng)
}

pub(crate) fn fit_conditional_arrays(
    x: ArrayView2<'_, f64>,
    j: usize,
    kind: &FeatureKind,
    spec: &CdeSpec,
    rng: &RngStream,
) -> Result<ConditionalModel> {
    fit_with_origin(x, j, kind, spec, rng, None)
}

/// `origin[i]` names the source row of row `i` when `x` is a resample.
fn fit_with_origin(
    x: ArrayView2<'_, f64>,
    j: usize,
    kind: &FeatureKind,
    spec: &CdeSpec,
    rng: &RngStream,
    origin: Option<&[usize]>,
) -> Result<ConditionalModel> {
    spec.validate()?;
    let n = x.nrows();
    let p = x.ncols();
    if n < 10 {
        return Err(HrtError::invalid("conditional density estimation needs at least 10 rows"));
    }
    if p < 2 {
        return Err(HrtError::invalid("conditional density estimation needs at least 2 features"));
    }
    let target = x.column(j);
    let estimator = match (spec, kind) {
        (CdeSpec::EmpiricalDiscrete(cfg), FeatureKind::Discrete(support)) => {
            let rest = drop_column(x, j);
            Estimator::Discrete(SoftmaxConditional::fit(rest.view(), target, support, cfg, rng)?)
        }
        (CdeSpec::EmpiricalDiscrete(_), FeatureKind::Continuous) => {
            return Err(HrtError::invalid(format!(
                "empirical_discrete needs a declared support for feature {j}"
            )))
        }
        (_, FeatureKind::Discrete(_)) => {
            return Err(HrtError::invalid(format!(
                "feature {j} is discrete; use the empirical_discrete estimator"
            )))
        }
        (CdeSpec::GaussianJoint { shrinkage }, FeatureKind::Continuous) => {
            let (mean, cov) = gaussian::shrunk_moments(x, *shrinkage)?;
            Estimator::Gaussian(GaussianConditional::from_joint(mean.view(), cov.view(), j)?)
        }
        (CdeSpec::Mdn(cfg), FeatureKind::Continuous) => {
            let var = target.var(0.0);
            if !(var > 1e-12 * (1.0 + target.mean().unwrap_or(0.0).powi(2))) {
                return Err(HrtError::DegenerateColumn { column: j });
            }
            let rest = drop_column(x, j);
            Estimator::Mdn(Mdn::fit(rest.view(), target, origin, cfg, rng)?)
        }
    };
    Ok(ConditionalModel {
        target: j,
        n_features: p,
        estimator,
    })
}

/// `b` conditional models; member 0 is fit on the full data and serves as the proposal.
#[derive(Debug, Clone)]
pub struct BootstrapEnsemble {
    members: Vec<ConditionalModel>,
}

impl BootstrapEnsemble {
    /// Assembles an ensemble from already-fitted members; the first is the proposal.
    pub fn from_members(members: Vec<ConditionalModel>) -> Result<Self> {
        if members.len() < 2 {
            return Err(HrtError::invalid("a bootstrap ensemble needs at least 2 members"));
        }
        let (t, p) = (members[0].target, members[0].n_features);
        if members.iter().any(|m| m.target != t || m.n_features != p) {
            return Err(HrtError::invalid("ensemble members disagree on target or width"));
        }
        Ok(BootstrapEnsemble { members })
    }

    pub fn members(&self) -> &[ConditionalModel] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn target(&self) -> usize {
        self.members[0].target
    }

    pub fn proposal(&self) -> &ConditionalModel {
        &self.members[0]
    }

    /// Row-wise conditionals of every member given full-width rows.
    pub fn conditionals(&self, x: ArrayView2<'_, f64>) -> Result<Vec<Conditional>> {
        let rest = drop_column(x, self.target());
        self.members.iter().map(|m| m.conditional_given(rest.view())).collect()
    }
}

pub fn fit_bootstrap_ensemble(
    data: &Dataset,
    j: usize,
    b: usize,
    spec: &CdeSpec,
    rng: &RngStream,
) -> Result<BootstrapEnsemble> {
    if j >= data.n_features() {
        return Err(HrtError::invalid(format!("feature index {j} out of range")));
    }
    fit_ensemble_arrays(data.features(), j, data.kind(j), b, spec, rng)
}

pub(crate) fn fit_ensemble_arrays(
    x: ArrayView2<'_, f64>,
    j: usize,
    kind: &FeatureKind,
    b: usize,
    spec: &CdeSpec,
    rng: &RngStream,
) -> Result<BootstrapEnsemble> {
    if b < 2 {
        return Err(HrtError::invalid("bootstrap ensemble size b must be >= 2"));
    }
    let n = x.nrows();
    let members = (0..b)
        .into_par_iter()
        .map(|m| {
            let fit_rng = rng.purpose(Purpose::Fit).replicate(m as u64);
            let fitted = if m == 0 {
                fit_conditional_arrays(x, j, kind, spec, &fit_rng)
            } else {
                let mut r = rng.purpose(Purpose::Bootstrap).replicate(m as u64).rng();
                let rows: Vec<usize> = (0..n).map(|_| r.random_range(0..n)).collect();
                let xb = x.select(Axis(0), &rows);
                fit_with_origin(xb.view(), j, kind, spec, &fit_rng, Some(&rows))
            };
            fitted.map_err(|e| e.in_member(m))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BootstrapEnsemble { members })
}

/// Pointwise lower/upper density quantiles across ensemble members.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileBand {
    pub l: f64,
    pub u: f64,
    pub lower: Array1<f64>,
    pub upper: Array1<f64>,
}

/// 0-based index of the nearest-rank `q`-th percentile among `b` sorted values.
#[inline]
pub(crate) fn nearest_rank(b: usize, q: f64) -> usize {
    let rank = (q * b as f64 / 100.0 - 1e-9).ceil() as usize;
    rank.clamp(1, b) - 1
}

pub(crate) fn check_quantiles(l: f64, u: f64) -> Result<()> {
    if !(0.0 <= l && l <= u && u <= 100.0) {
        return Err(HrtError::invalid(format!("quantiles must satisfy 0 <= l <= u <= 100, got ({l}, {u})")));
    }
    Ok(())
}

/// Lower and upper band densities at value `v` of row `i`; `scratch` is reused storage.
#[inline]
pub(crate) fn band_at(members: &[Conditional], i: usize, v: f64, lo_idx: usize, hi_idx: usize, scratch: &mut Vec<f64>) -> (f64, f64) {
    scratch.clear();
    scratch.extend(members.iter().map(|c| c.density(i, v)));
    scratch.sort_unstable_by(f64::total_cmp);
    (scratch[lo_idx], scratch[hi_idx])
}

/// Ensemble member densities laid out for repeated evaluation at one row.
/// Gaussian-mixture members are flattened to `(scale, mean, −1/(2σ²))` per component.
#[derive(Debug, Clone)]
pub(crate) struct MemberTable {
    members: Vec<Conditional>,
    /// Per row, `b · k` component triples, when every member is a `k`-mixture.
    mixture: Option<(usize, Vec<[f64; 3]>)>,
}

impl MemberTable {
    pub(crate) fn new(members: Vec<Conditional>) -> Self {
        let k = match members.first() {
            Some(Conditional::Mixture { weights, .. }) => weights.ncols(),
            _ => 0,
        };
        let uniform = k > 0
            && members
                .iter()
                .all(|m| matches!(m, Conditional::Mixture { weights, .. } if weights.ncols() == k));
        let mixture = uniform.then(|| {
            let n = members[0].n_rows();
            let mut flat = Vec::with_capacity(n * members.len() * k);
            for i in 0..n {
                for m in &members {
                    let Conditional::Mixture { weights, means, sds } = m else { unreachable!() };
                    for c in 0..k {
                        let sd = sds[[i, c]];
                        flat.push([
                            weights[[i, c]] * dist::INV_SQRT_2PI / sd,
                            means[[i, c]],
                            -0.5 / (sd * sd),
                        ]);
                    }
                }
            }
            (k, flat)
        });
        MemberTable { members, mixture }
    }

    /// Densities of every member at value `v` of row `i`, in member order.
    #[inline]
    pub(crate) fn densities(&self, i: usize, v: f64, out: &mut Vec<f64>) {
        out.clear();
        match &self.mixture {
            Some((k, flat)) => {
                let b = self.members.len();
                let row = &flat[i * b * k..(i + 1) * b * k];
                out.extend(row.chunks_exact(*k).map(|comps| {
                    comps
                        .iter()
                        .map(|[a, mu, c]| {
                            let d = v - mu;
                            a * (c * d * d).exp()
                        })
                        .sum::<f64>()
                }));
            }
            None => out.extend(self.members.iter().map(|m| m.density(i, v))),
        }
    }
}

/// The `lo`-th and `hi`-th smallest of `values` (`lo <= hi`); reorders `values`.
#[inline]
pub(crate) fn order_pair(values: &mut [f64], lo: usize, hi: usize) -> (f64, f64) {
    let (_, &mut h, _) = values.select_nth_unstable_by(hi, f64::total_cmp);
    let l = if lo < hi {
        *values[..hi].select_nth_unstable_by(lo, f64::total_cmp).1
    } else {
        h
    };
    (l, h)
}

pub fn band(
    ensemble: &BootstrapEnsemble,
    l: f64,
    u: f64,
    x_j: ArrayView1<'_, f64>,
    x_minus_j: ArrayView2<'_, f64>,
) -> Result<QuantileBand> {
    check_quantiles(l, u)?;
    if x_j.len() != x_minus_j.nrows() {
        return Err(HrtError::LengthMismatch {
            what: "x_j",
            expected: x_minus_j.nrows(),
            got: x_j.len(),
        });
    }
    let conds: Vec<Conditional> = ensemble
        .members
        .iter()
        .map(|m| m.conditional_given(x_minus_j))
        .collect::<Result<_>>()?;
    let b = conds.len();
    let (lo, hi) = (nearest_rank(b, l), nearest_rank(b, u));
    let mut scratch = Vec::with_capacity(b);
    let mut lower = Array1::zeros(x_j.len());
    let mut upper = Array1::zeros(x_j.len());
    for (i, &v) in x_j.iter().enumerate() {
        let (a, c) = band_at(&conds, i, v, lo, hi, &mut scratch);
        lower[i] = a;
        upper[i] = c;
    }
    Ok(QuantileBand { l, u, lower, upper })
}
