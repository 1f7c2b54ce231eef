//! Data-adaptive choice of the bootstrap quantile band `(l, u)` by one-way
//! Kolmogorov–Smirnov statistics against a Monte Carlo uniform threshold.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use ndarray::ArrayView2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cde::{nearest_rank, BootstrapEnsemble};
use crate::data::FeatureKind;
use crate::error::{HrtError, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KsSearchConfig {
    /// Number of simulated uniform samples behind the acceptance threshold.
    pub mc_draws: usize,
    /// Lower-quantile candidates, tried in order (descending from the median).
    pub lower_candidates: Vec<f64>,
    /// Upper-quantile candidates, tried in order (ascending from the median).
    pub upper_candidates: Vec<f64>,
    /// Band used when no candidate passes, and for discrete features.
    pub fallback: (f64, f64),
    /// Percentile of the simulated statistics used as threshold; 100 = maximum.
    pub threshold_percentile: f64,
}

impl Default for KsSearchConfig {
    fn default() -> Self {
        KsSearchConfig {
            mc_draws: 100_000,
            lower_candidates: (0..10).map(|i| 50.0 - 5.0 * i as f64).collect(),
            upper_candidates: (0..10).map(|i| 50.0 + 5.0 * i as f64).collect(),
            fallback: (5.0, 95.0),
            threshold_percentile: 100.0,
        }
    }
}

impl KsSearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mc_draws < 1000 {
            return Err(HrtError::invalid("KS search needs mc_draws >= 1000"));
        }
        let in_range = |v: &f64| (0.0..=100.0).contains(v);
        if !self.lower_candidates.iter().all(|v| in_range(v) && *v <= 50.0)
            || !self.upper_candidates.iter().all(|v| in_range(v) && *v >= 50.0)
        {
            return Err(HrtError::invalid(
                "KS candidates must lie in [0, 50] (lower) and [50, 100] (upper)",
            ));
        }
        let (l, u) = self.fallback;
        if !(in_range(&l) && in_range(&u) && l <= 50.0 && u >= 50.0) {
            return Err(HrtError::invalid("fallback band must satisfy 0 <= l <= 50 <= u <= 100"));
        }
        if !(self.threshold_percentile > 0.0 && self.threshold_percentile <= 100.0) {
            return Err(HrtError::invalid("threshold percentile must lie in (0, 100]"));
        }
        Ok(())
    }
}

fn sorted_checked(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(HrtError::invalid("KS statistic of an empty sample"));
    }
    if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(HrtError::invalid("CDF values must lie in [0, 1]"));
    }
    let mut v = values.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    Ok(v)
}

#[inline]
fn ks_plus_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &c)| c - i as f64 / n)
        .fold(0.0, f64::max)
}

#[inline]
fn ks_minus_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &c)| (i + 1) as f64 / n - c)
        .fold(0.0, f64::max)
}

/// `sup_c max(0, c − F̂(c))`: how far the empirical CDF falls below uniform.
pub fn ks_plus(cdf_values: &[f64]) -> Result<f64> {
    Ok(ks_plus_sorted(&sorted_checked(cdf_values)?))
}

/// `sup_c max(0, F̂(c) − c)`: how far the empirical CDF rises above uniform.
pub fn ks_minus(cdf_values: &[f64]) -> Result<f64> {
    Ok(ks_minus_sorted(&sorted_checked(cdf_values)?))
}

type ThresholdKey = (usize, usize, u64, RngStream);

fn threshold_cache() -> &'static Mutex<HashMap<ThresholdKey, (f64, f64)>> {
    static CACHE: OnceLock<Mutex<HashMap<ThresholdKey, (f64, f64)>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// `(τ⁺, τ⁻)`: the `percentile`-th of `mc_draws` simulated `(KS⁺, KS⁻)` values
/// for `n` iid uniforms. Results are memoized per argument tuple.
pub fn mc_threshold(n: usize, mc_draws: usize, percentile: f64, rng: &RngStream) -> Result<(f64, f64)> {
    if n == 0 || mc_draws == 0 {
        return Err(HrtError::invalid("MC threshold needs n >= 1 and mc_draws >= 1"));
    }
    let key = (n, mc_draws, percentile.to_bits(), *rng);
    if let Some(&hit) = threshold_cache().lock().unwrap_or_else(|p| p.into_inner()).get(&key) {
        return Ok(hit);
    }
    const CHUNK: usize = 1024;
    let chunks = mc_draws.div_ceil(CHUNK);
    let stats: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut r = rng.child(c as u64).rng();
            let count = CHUNK.min(mc_draws - c * CHUNK);
            let mut buf = vec![0.0; n];
            (0..count)
                .map(|_| {
                    for v in buf.iter_mut() {
                        *v = r.random::<f64>();
                    }
                    buf.sort_unstable_by(f64::total_cmp);
                    (ks_plus_sorted(&buf), ks_minus_sorted(&buf))
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let mut plus: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let mut minus: Vec<f64> = stats.iter().map(|s| s.1).collect();
    plus.sort_unstable_by(f64::total_cmp);
    minus.sort_unstable_by(f64::total_cmp);
    let idx = nearest_rank(mc_draws, percentile);
    let out = (plus[idx], minus[idx]);
    threshold_cache()
        .lock()
        .unwrap_or_else(|p| p.into_inner())
        .insert(key, out);
    Ok(out)
}

/// Per-sample quantile CDFs: `sorted[i]` holds the members' CDFs at the observed value of row `i`, ascending.
fn member_cdfs(ensemble: &BootstrapEnsemble, x: ArrayView2<'_, f64>) -> Result<Vec<Vec<f64>>> {
    let j = ensemble.target();
    let conds = ensemble.conditionals(x)?;
    Ok((0..x.nrows())
        .map(|i| {
            let v = x[[i, j]];
            let mut c: Vec<f64> = conds.iter().map(|m| m.cdf(i, v)).collect();
            c.sort_unstable_by(f64::total_cmp);
            c
        })
        .collect())
}

/// Widest-from-the-median search for `(l, u)`: the first lower candidate whose
/// quantile-member CDF values pass `KS⁺ < τ⁺`, and likewise upward with `KS⁻ < τ⁻`.
/// A side with no passing candidate takes its fallback value.
pub fn select_quantiles(
    ensemble: &BootstrapEnsemble,
    x: ArrayView2<'_, f64>,
    kind: &FeatureKind,
    cfg: &KsSearchConfig,
    rng: &RngStream,
) -> Result<(f64, f64)> {
    cfg.validate()?;
    if kind.is_discrete() {
        return Ok(cfg.fallback);
    }
    let cdfs = member_cdfs(ensemble, x)?;
    let (tau_plus, tau_minus) = mc_threshold(x.nrows(), cfg.mc_draws, cfg.threshold_percentile, rng)?;
    let b = ensemble.len();
    let mut buf = vec![0.0; cdfs.len()];
    let mut stat_at = |q: f64, plus: bool| {
        let r = nearest_rank(b, q);
        for (o, c) in buf.iter_mut().zip(&cdfs) {
            *o = c[r];
        }
        buf.sort_unstable_by(f64::total_cmp);
        if plus {
            ks_plus_sorted(&buf)
        } else {
            ks_minus_sorted(&buf)
        }
    };
    let l = cfg
        .lower_candidates
        .iter()
        .copied()
        .find(|&l| stat_at(l, true) < tau_plus)
        .unwrap_or(cfg.fallback.0);
    let u = cfg
        .upper_candidates
        .iter()
        .copied()
        .find(|&u| stat_at(u, false) < tau_minus)
        .unwrap_or(cfg.fallback.1);
    Ok((l, u))
}
