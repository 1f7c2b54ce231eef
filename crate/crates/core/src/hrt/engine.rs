use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::weights::WeightAggregation;
use super::{Diagnostics, FeatureResult, HrtConfig, HrtMode, Sampler};
use crate::cde::{check_quantiles, nearest_rank, order_pair, Conditional, MemberTable};
use crate::data::Dataset;
use crate::error::{HrtError, Result};
use crate::models::{ColumnSwap, CvFit, FittedPredictor};
use crate::risk::RiskFunction;
use crate::rng::{Purpose, RngStream};

/// Rows of scored data handed to one fitted model.
struct Part<'a> {
    swap: ColumnSwap<'a>,
    /// Positions within the scored row set.
    rows: Vec<usize>,
    /// Observed values of column `j` on these rows.
    observed: Vec<f64>,
    y: Vec<f64>,
}

impl<'a> Part<'a> {
    fn new(model: &'a FittedPredictor, x: Array2<f64>, rows: Vec<usize>, y: Vec<f64>, j: usize) -> Result<Self> {
        let observed = x.column(j).to_vec();
        Ok(Part {
            swap: ColumnSwap::new(model, x, j)?,
            rows,
            observed,
            y,
        })
    }
}

/// Computes the test statistic `(1/|parts|) Σ_parts risk(part)` for candidate columns.
pub(crate) struct Scorer<'a> {
    parts: Vec<Part<'a>>,
    j: usize,
    risk: RiskFunction,
    n_rows: usize,
}

/// Target number of predicted rows per batched model call.
const BATCH_ROWS: usize = 8192;

impl<'a> Scorer<'a> {
    pub(crate) fn holdout(model: &'a FittedPredictor, test: &Dataset, j: usize, risk: RiskFunction) -> Result<Self> {
        let n = test.n_samples();
        let part = Part::new(model, test.features().to_owned(), (0..n).collect(), test.response().to_vec(), j)?;
        Ok(Scorer {
            parts: vec![part],
            j,
            risk,
            n_rows: n,
        })
    }

    pub(crate) fn cross_validated(cv: &'a CvFit, data: &Dataset, j: usize, risk: RiskFunction) -> Result<Self> {
        let folds = cv.folds();
        if folds.len() != cv.models.len() {
            return Err(HrtError::invalid("cross-validation folds and models are misaligned"));
        }
        let n = data.n_samples();
        if cv.oof_predictions.len() != n {
            return Err(HrtError::LengthMismatch {
                what: "cross-validation rows",
                expected: n,
                got: cv.oof_predictions.len(),
            });
        }
        let parts = folds
            .iter()
            .zip(&cv.models)
            .map(|(fold, model)| {
                let y = fold.iter().map(|&i| data.response()[i]).collect();
                Part::new(model, data.features().select(Axis(0), fold), fold.clone(), y, j)
            })
            .collect::<Result<_>>()?;
        Ok(Scorer {
            parts,
            j,
            risk,
            n_rows: n,
        })
    }

    pub(crate) fn n_rows(&self) -> usize {
        self.n_rows
    }

    fn batch_size(&self) -> usize {
        (BATCH_ROWS / self.n_rows.max(1)).max(1)
    }

    /// Statistic for each candidate column (each of length `n_rows`).
    pub(crate) fn score(&self, columns: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut stats = vec![0.0; columns.len()];
        let n_parts = self.parts.len() as f64;
        for (m, part) in self.parts.iter().enumerate() {
            let np = part.rows.len();
            let local: Vec<Vec<f64>> = columns.iter().map(|c| part.rows.iter().map(|&r| c[r]).collect()).collect();
            let refs: Vec<&[f64]> = local.iter().map(Vec::as_slice).collect();
            let pred = part.swap.predict(&refs).map_err(|e| self.attribute(e, m))?;
            for (b, s) in stats.iter_mut().enumerate() {
                *s += self.risk.mean(&part.y, &pred[b * np..(b + 1) * np]) / n_parts;
            }
        }
        Ok(stats)
    }

    fn attribute(&self, e: HrtError, part: usize) -> HrtError {
        if self.parts.len() > 1 {
            e.in_fold(part)
        } else {
            e
        }
    }

    /// Per-row risks `T[row, s]` with column `j` set to `grid[row, s]`.
    fn grid_risks(&self, grid: &Array2<f64>) -> Result<Array2<f64>> {
        let s_count = grid.ncols();
        let mut t = Array2::zeros((self.n_rows, s_count));
        for (m, part) in self.parts.iter().enumerate() {
            let np = part.rows.len();
            let local: Vec<Vec<f64>> = (0..s_count).map(|s| part.rows.iter().map(|&r| grid[[r, s]]).collect()).collect();
            let refs: Vec<&[f64]> = local.iter().map(Vec::as_slice).collect();
            let pred = part.swap.predict(&refs).map_err(|e| self.attribute(e, m))?;
            for s in 0..s_count {
                for (r, &row) in part.rows.iter().enumerate() {
                    t[[row, s]] = self.risk.sample(part.y[r], pred[s * np + r]);
                }
            }
        }
        if t.iter().any(|v| !v.is_finite()) {
            return Err(HrtError::NonFinite { what: "grid risks" });
        }
        Ok(t)
    }

    fn observed_column(&self) -> Vec<f64> {
        let mut col = vec![0.0; self.n_rows];
        for part in &self.parts {
            for (&row, &v) in part.rows.iter().zip(&part.observed) {
                col[row] = v;
            }
        }
        col
    }
}

struct BandCtx {
    table: MemberTable,
    lo: usize,
    hi: usize,
    l: f64,
    u: f64,
}

/// Where null columns come from, resolved for the scored rows.
enum Source {
    Proposal { prop: Conditional, band: Option<BandCtx> },
    Permutation { values: Vec<f64> },
}

impl Source {
    fn new(sampler: &Sampler<'_>, x: ArrayView2<'_, f64>, j: usize) -> Result<Self> {
        Ok(match sampler {
            Sampler::Conditional(model) => {
                if model.target() != j {
                    return Err(HrtError::invalid(format!(
                        "sampler targets feature {}, test is for feature {j}",
                        model.target()
                    )));
                }
                Source::Proposal {
                    prop: model.conditional(x)?,
                    band: None,
                }
            }
            Sampler::Calibrated { ensemble, l, u } => {
                check_quantiles(*l, *u)?;
                if ensemble.target() != j {
                    return Err(HrtError::invalid(format!(
                        "ensemble targets feature {}, test is for feature {j}",
                        ensemble.target()
                    )));
                }
                let members = ensemble.conditionals(x)?;
                let b = members.len();
                Source::Proposal {
                    prop: members[0].clone(),
                    band: Some(BandCtx {
                        table: MemberTable::new(members),
                        lo: nearest_rank(b, *l),
                        hi: nearest_rank(b, *u),
                        l: *l,
                        u: *u,
                    }),
                }
            }
            Sampler::Permutation => Source::Permutation {
                values: x.column(j).to_vec(),
            },
        })
    }

    fn draw(&self, rng: &mut ChaCha8Rng, out: &mut Vec<f64>) {
        match self {
            Source::Proposal { prop, .. } => {
                out.resize(prop.n_rows(), 0.0);
                prop.sample_into(rng, out);
            }
            Source::Permutation { values } => {
                out.clear();
                out.extend_from_slice(values);
                out.shuffle(rng);
            }
        }
    }

    /// `Σ_i ln(lower_i/q_i)` and `Σ_i ln(upper_i/q_i)` at the drawn values.
    fn log_ratio_sums(&self, values: &[f64], scratch: &mut Vec<f64>) -> Result<Option<(f64, f64)>> {
        let Source::Proposal { band: Some(bc), .. } = self else {
            return Ok(None);
        };
        let (mut lo_sum, mut hi_sum) = (0.0, 0.0);
        for (i, &v) in values.iter().enumerate() {
            bc.table.densities(i, v, scratch);
            let q = scratch[0];
            if !(q > 0.0) {
                return Err(HrtError::ZeroProposalDensity { index: i });
            }
            let (lo, hi) = order_pair(scratch, bc.lo, bc.hi);
            lo_sum += (lo / q).ln();
            hi_sum += (hi / q).ln();
        }
        Ok(Some((lo_sum, hi_sum)))
    }

    fn band(&self) -> Option<(f64, f64)> {
        match self {
            Source::Proposal { band: Some(b), .. } => Some((b.l, b.u)),
            _ => None,
        }
    }

    fn name(&self, sampler: &Sampler<'_>) -> String {
        match sampler {
            Sampler::Conditional(m) => m.kind_name().to_string(),
            Sampler::Calibrated { ensemble, .. } => {
                format!("{} ensemble (b={})", ensemble.proposal().kind_name(), ensemble.len())
            }
            Sampler::Permutation => "permutation".to_string(),
        }
    }
}

fn weight_from(sums: Option<(f64, f64)>, indicator: bool, agg: WeightAggregation, n: usize) -> f64 {
    match sums {
        None => 1.0,
        Some((lo, hi)) => agg.finish(if indicator { hi } else { lo }, n),
    }
}

fn finish(
    j: usize,
    t: f64,
    nulls: Vec<f64>,
    weights: Vec<f64>,
    mode: HrtMode,
    band: Option<(f64, f64)>,
    sampler: String,
) -> Result<FeatureResult> {
    let p_value = super::weights::weighted_pvalue(t, &nulls, &weights)?;
    let mut indicator_count = 0;
    let mut weight_sum = 0.0;
    let mut indicator_weight_sum = 0.0;
    for (&v, &w) in nulls.iter().zip(&weights) {
        weight_sum += w;
        if t >= v {
            indicator_count += 1;
            indicator_weight_sum += w;
        }
    }
    Ok(FeatureResult {
        feature: j,
        p_value,
        t,
        null_risks: nulls,
        weights,
        diagnostics: Diagnostics {
            mode,
            sampler,
            band,
            indicator_count,
            weight_sum,
            indicator_weight_sum,
        },
    })
}

/// Draw-and-score loop shared by the basic and cross-validated engines.
fn run_direct(
    scorer: &Scorer<'_>,
    source: &Source,
    cfg: &HrtConfig,
    rng: &RngStream,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let t = scorer.score(&[scorer.observed_column()])?[0];
    if !t.is_finite() {
        return Err(HrtError::NonFinite { what: "observed risk" });
    }
    let null_rng = rng.purpose(Purpose::Null);
    let k_total = cfg.nsamples;
    let batch = scorer.batch_size();
    let n = scorer.n_rows();
    let chunks: Vec<Vec<(f64, f64)>> = (0..k_total.div_ceil(batch))
        .into_par_iter()
        .map(|c| {
            let ks = c * batch..((c + 1) * batch).min(k_total);
            let mut cols = Vec::with_capacity(ks.len());
            let mut sums = Vec::with_capacity(ks.len());
            let mut scratch = Vec::new();
            for k in ks {
                let mut r = null_rng.replicate(k as u64).rng();
                let mut col = Vec::with_capacity(n);
                source.draw(&mut r, &mut col);
                sums.push(source.log_ratio_sums(&col, &mut scratch)?);
                cols.push(col);
            }
            let stats = scorer.score(&cols)?;
            Ok(stats
                .into_iter()
                .zip(sums)
                .map(|(s, ls)| {
                    let w = weight_from(ls, t >= s, cfg.aggregation, n);
                    (s, w)
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let (nulls, weights) = chunks.into_iter().flatten().unzip();
    Ok((t, nulls, weights))
}

/// Grid-approximation engine: model queried once per grid point, nulls assembled by lookup.
fn run_grid(
    scorer: &Scorer<'_>,
    source: &Source,
    cfg: &HrtConfig,
    rng: &RngStream,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let Source::Proposal { prop, band } = source else {
        return Err(HrtError::invalid("the grid engine needs a conditional sampler, not a permutation"));
    };
    let n = scorer.n_rows();
    // Z, P̃ (None = uniform) for each scored row.
    let (grid, probs) = match prop {
        Conditional::Discrete { support, probs } => {
            let z = Array2::from_shape_fn((n, support.len()), |(_, s)| support[s]);
            (z, Some(probs.clone()))
        }
        Conditional::Mixture { .. } => {
            let s_count = cfg.grid_size;
            if s_count < 2 {
                return Err(HrtError::invalid("grid size S must be >= 2 for continuous features"));
            }
            let z = Array2::from_shape_fn((n, s_count), |(i, s)| {
                prop.quantile(i, (s as f64 + 0.5) / s_count as f64)
            });
            (z, None)
        }
    };
    let s_count = grid.ncols();
    let t_grid = scorer.grid_risks(&grid)?;
    let t = scorer.score(&[scorer.observed_column()])?[0];
    if !t.is_finite() {
        return Err(HrtError::NonFinite { what: "observed risk" });
    }

    // Log band ratios cached at grid points.
    let ratios = match band {
        None => None,
        Some(bc) => {
            let mut lo = Array2::zeros((n, s_count));
            let mut hi = Array2::zeros((n, s_count));
            let mut scratch = Vec::new();
            for i in 0..n {
                for s in 0..s_count {
                    let v = grid[[i, s]];
                    bc.table.densities(i, v, &mut scratch);
                    let q = scratch[0];
                    if !(q > 0.0) {
                        return Err(HrtError::ZeroProposalDensity { index: i });
                    }
                    let (a, b) = order_pair(&mut scratch, bc.lo, bc.hi);
                    lo[[i, s]] = (a / q).ln();
                    hi[[i, s]] = (b / q).ln();
                }
            }
            Some((lo, hi))
        }
    };

    // Each part's rows and weight in the statistic.
    let part_rows: Vec<(&[usize], f64)> = scorer
        .parts
        .iter()
        .map(|p| (p.rows.as_slice(), 1.0 / (p.rows.len() as f64 * scorer.parts.len() as f64)))
        .collect();
    let null_rng = rng.purpose(Purpose::Null);
    let k_total = cfg.nsamples;
    let out: Vec<(f64, f64)> = (0..k_total)
        .into_par_iter()
        .with_min_len(64)
        .map(|k| {
            let mut r = null_rng.replicate(k as u64).rng();
            let mut z = vec![0usize; n];
            for (i, zi) in z.iter_mut().enumerate() {
                *zi = match &probs {
                    None => r.random_range(0..s_count),
                    Some(pr) => {
                        let u: f64 = r.random();
                        let mut acc = 0.0;
                        let mut pick = 0;
                        for s in 0..s_count {
                            let ps = pr[[i, s]];
                            if ps > 0.0 {
                                pick = s;
                            }
                            acc += ps;
                            if u < acc {
                                pick = s;
                                break;
                            }
                        }
                        pick
                    }
                };
            }
            let mut stat = 0.0;
            for (rows, scale) in &part_rows {
                let mut sum = 0.0;
                for &i in rows.iter() {
                    sum += t_grid[[i, z[i]]];
                }
                stat += sum * scale;
            }
            let sums = ratios.as_ref().map(|(lo, hi)| {
                let mut a = 0.0;
                let mut b = 0.0;
                for (i, &zi) in z.iter().enumerate() {
                    a += lo[[i, zi]];
                    b += hi[[i, zi]];
                }
                (a, b)
            });
            (stat, weight_from(sums, t >= stat, cfg.aggregation, n))
        })
        .collect();
    let (nulls, weights) = out.into_iter().unzip();
    Ok((t, nulls, weights))
}

fn check_k(cfg: &HrtConfig) -> Result<()> {
    if cfg.nsamples == 0 {
        return Err(HrtError::invalid("number of null samples K must be >= 1"));
    }
    Ok(())
}

/// Holdout test: score the fixed model on `test`, redraw column `j` of the test rows `K` times.
pub fn hrt_basic(
    model: &FittedPredictor,
    test: &Dataset,
    j: usize,
    sampler: Sampler<'_>,
    cfg: &HrtConfig,
    rng: &RngStream,
) -> Result<FeatureResult> {
    check_k(cfg)?;
    check_feature(j, test)?;
    let scorer = Scorer::holdout(model, test, j, cfg.risk)?;
    let source = Source::new(&sampler, test.features(), j)?;
    let (t, nulls, weights) = run_direct(&scorer, &source, cfg, rng)?;
    finish(j, t, nulls, weights, HrtMode::Basic, source.band(), source.name(&sampler))
}

/// Cross-validated test: the statistic is the mean of held-out fold risks; each
/// null redraws column `j` once over all rows and re-scores every fold.
pub fn hrt_cv(
    cv: &CvFit,
    data: &Dataset,
    j: usize,
    sampler: Sampler<'_>,
    cfg: &HrtConfig,
    rng: &RngStream,
) -> Result<FeatureResult> {
    check_k(cfg)?;
    check_feature(j, data)?;
    let scorer = Scorer::cross_validated(cv, data, j, cfg.risk)?;
    let source = Source::new(&sampler, data.features(), j)?;
    let (t, nulls, weights) = run_direct(&scorer, &source, cfg, rng)?;
    finish(j, t, nulls, weights, HrtMode::Cv, source.band(), source.name(&sampler))
}

/// Grid-approximated holdout test.
pub fn hrt_fast(
    model: &FittedPredictor,
    test: &Dataset,
    j: usize,
    sampler: Sampler<'_>,
    cfg: &HrtConfig,
    rng: &RngStream,
) -> Result<FeatureResult> {
    check_k(cfg)?;
    check_feature(j, test)?;
    let scorer = Scorer::holdout(model, test, j, cfg.risk)?;
    let source = Source::new(&sampler, test.features(), j)?;
    let (t, nulls, weights) = run_grid(&scorer, &source, cfg, rng)?;
    finish(j, t, nulls, weights, HrtMode::Fast, source.band(), source.name(&sampler))
}

/// Grid-approximated cross-validated test.
pub fn hrt_fast_cv(
    cv: &CvFit,
    data: &Dataset,
    j: usize,
    sampler: Sampler<'_>,
    cfg: &HrtConfig,
    rng: &RngStream,
) -> Result<FeatureResult> {
    check_k(cfg)?;
    check_feature(j, data)?;
    let scorer = Scorer::cross_validated(cv, data, j, cfg.risk)?;
    let source = Source::new(&sampler, data.features(), j)?;
    let (t, nulls, weights) = run_grid(&scorer, &source, cfg, rng)?;
    finish(j, t, nulls, weights, HrtMode::FastCv, source.band(), source.name(&sampler))
}

fn check_feature(j: usize, data: &Dataset) -> Result<()> {
    if j >= data.n_features() {
        return Err(HrtError::invalid(format!(
            "feature index {j} out of range for {} features",
            data.n_features()
        )));
    }
    Ok(())
}

/// Risk change `G(null-swapped) − G(observed)` from one null draw of column `j`.
pub(crate) fn risk_change(scorer: &Scorer<'_>, sampler: &Sampler<'_>, x: ArrayView2<'_, f64>, rng: &RngStream) -> Result<f64> {
    let source = Source::new(sampler, x, scorer.j)?;
    let mut r = rng.purpose(Purpose::Null).replicate(0).rng();
    let mut col = Vec::with_capacity(scorer.n_rows());
    source.draw(&mut r, &mut col);
    let stats = scorer.score(&[scorer.observed_column(), col])?;
    Ok(stats[1] - stats[0])
}
