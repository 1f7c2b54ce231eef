use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use crate::data::support_index;

pub(crate) const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
pub(crate) fn normal_pdf(v: f64, mean: f64, sd: f64) -> f64 {
    let z = (v - mean) / sd;
    INV_SQRT_2PI / sd * (-0.5 * z * z).exp()
}

#[inline]
pub(crate) fn normal_cdf(v: f64, mean: f64, sd: f64) -> f64 {
    0.5 * erfc(-(v - mean) / (sd * std::f64::consts::SQRT_2))
}

/// Row-wise conditional distributions of one feature, one distribution per
/// row of `x_{−j}`.
#[derive(Debug, Clone, PartialEq)]
pub enum Conditional {
    /// Gaussian mixtures; every matrix is `rows × components`.
    Mixture {
        weights: Array2<f64>,
        means: Array2<f64>,
        sds: Array2<f64>,
    },
    /// Probability mass over a sorted support; `probs` is `rows × support.len()`.
    Discrete { support: Vec<f64>, probs: Array2<f64> },
}

impl Conditional {
    pub fn n_rows(&self) -> usize {
        match self {
            Conditional::Mixture { weights, .. } => weights.nrows(),
            Conditional::Discrete { probs, .. } => probs.nrows(),
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, Conditional::Discrete { .. })
    }

    /// Restriction to a subset of rows.
    pub fn select_rows(&self, rows: &[usize]) -> Conditional {
        use ndarray::Axis;
        match self {
            Conditional::Mixture { weights, means, sds } => Conditional::Mixture {
                weights: weights.select(Axis(0), rows),
                means: means.select(Axis(0), rows),
                sds: sds.select(Axis(0), rows),
            },
            Conditional::Discrete { support, probs } => Conditional::Discrete {
                support: support.clone(),
                probs: probs.select(Axis(0), rows),
            },
        }
    }

    /// One draw for row `i`.
    pub fn sample_row<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> f64 {
        match self {
            Conditional::Mixture { weights, means, sds } => {
                let w = weights.row(i);
                let k = if w.len() == 1 {
                    0
                } else {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    let mut pick = w.len() - 1;
                    for (c, &wc) in w.iter().enumerate() {
                        acc += wc;
                        if u < acc {
                            pick = c;
                            break;
                        }
                    }
                    pick
                };
                let z: f64 = rng.sample(StandardNormal);
                means[[i, k]] + sds[[i, k]] * z
            }
            Conditional::Discrete { support, probs } => {
                let s = discrete_pick(probs.row(i).iter().copied(), rng.random());
                support[s]
            }
        }
    }

    /// One independent draw per row.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.n_rows());
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.sample_row(i, rng);
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.n_rows()];
        self.sample_into(rng, &mut out);
        out
    }

    /// Density (continuous) or probability mass (discrete) of `v` at row `i`.
    pub fn density(&self, i: usize, v: f64) -> f64 {
        match self {
            Conditional::Mixture { weights, means, sds } => {
                let mut d = 0.0;
                for k in 0..weights.ncols() {
                    d += weights[[i, k]] * normal_pdf(v, means[[i, k]], sds[[i, k]]);
                }
                d
            }
            Conditional::Discrete { support, probs } => match support_index(support, v) {
                Some(s) => probs[[i, s]],
                None => 0.0,
            },
        }
    }

    /// `P(X_j ≤ v)` at row `i`.
    pub fn cdf(&self, i: usize, v: f64) -> f64 {
        match self {
            Conditional::Mixture { weights, means, sds } => {
                let mut c = 0.0;
                for k in 0..weights.ncols() {
                    c += weights[[i, k]] * normal_cdf(v, means[[i, k]], sds[[i, k]]);
                }
                c.clamp(0.0, 1.0)
            }
            Conditional::Discrete { support, probs } => {
                let tol = 1e-9 * (1.0 + v.abs());
                let upto = support.partition_point(|&s| s <= v + tol);
                probs.row(i).iter().take(upto).sum::<f64>().min(1.0)
            }
        }
    }

    /// Smallest `v` with `cdf(i, v) ≥ q`, for `q ∈ (0, 1)`.
    pub fn quantile(&self, i: usize, q: f64) -> f64 {
        match self {
            Conditional::Mixture { weights, means, sds } => {
                if weights.ncols() == 1 {
                    return Normal::new(means[[i, 0]], sds[[i, 0]])
                        .map(|n| n.inverse_cdf(q))
                        .unwrap_or(means[[i, 0]]);
                }
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for k in 0..weights.ncols() {
                    lo = lo.min(means[[i, k]] - 40.0 * sds[[i, k]]);
                    hi = hi.max(means[[i, k]] + 40.0 * sds[[i, k]]);
                }
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if self.cdf(i, mid) < q {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            }
            Conditional::Discrete { support, probs } => {
                support[discrete_pick(probs.row(i).iter().copied(), q)]
            }
        }
    }
}

/// Inverse-CDF pick of a category from probabilities and one uniform.
#[inline]
fn discrete_pick(probs: impl Iterator<Item = f64>, u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (s, p) in probs.enumerate() {
        if p > 0.0 {
            last_positive = s;
        }
        acc += p;
        if u < acc {
            return s;
        }
    }
    last_positive
}
