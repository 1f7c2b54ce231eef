//! Synthetic benchmark: correlated Gaussian covariates, a block-nonlinear
//! ground truth, and power/FDR evaluation of engine variants.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cde::{ConditionalModel, GaussianConditional};
use crate::data::Dataset;
use crate::error::{HrtError, Result};
use crate::hrt::{
    fit_pipeline, fit_samplers, test_features, Calibration, FeatureSampler, FittedPipeline, HrtConfig, HrtMode,
    NullSampler,
};
use crate::models::{LassoConfig, PredictorSpec};
use crate::rng::{Purpose, RngStream};
use crate::select::{bh, erk_select, erk_statistics};

/// Distribution of the ground-truth weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightRule {
    /// Magnitude `Uniform[low, high]`, sign `±1` with equal probability.
    SignedUniform { low: f64, high: f64 },
}

impl Default for WeightRule {
    fn default() -> Self {
        WeightRule::SignedUniform { low: 0.5, high: 2.0 }
    }
}

/// What a benchmark arm runs per feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Variant {
    /// The engine with the configured conditional sampler, then BH.
    Hrt { mode: HrtMode },
    /// The engine with shuffled columns as nulls, then BH.
    Permutation { mode: HrtMode },
    /// One-draw risk-change statistics with the sign filter.
    Erk { mode: HrtMode },
}

impl Variant {
    pub fn label(self) -> String {
        match self {
            Variant::Hrt { mode } => mode.name().to_string(),
            Variant::Permutation { mode } => format!("permutation_{}", mode.name()),
            Variant::Erk { mode } => format!("erk_{}", mode.name()),
        }
    }

    fn mode(self) -> HrtMode {
        match self {
            Variant::Hrt { mode } | Variant::Permutation { mode } | Variant::Erk { mode } => mode,
        }
    }
}

/// Source of the conditional samplers in the `Hrt` and `Erk` arms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerSource {
    /// Fit per trial as configured in `hrt`.
    #[default]
    Fitted,
    /// The closed-form Gaussian complete conditional of the covariates.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkSpec {
    pub trials: usize,
    pub n: usize,
    pub p: usize,
    /// Leading features carrying signal; a multiple of 4.
    pub signals: usize,
    pub noise_sd: f64,
    pub weights: WeightRule,
    /// One entry per predictor arm.
    pub models: Vec<PredictorSpec>,
    pub variants: Vec<Variant>,
    pub sampler: SamplerSource,
    pub hrt: HrtConfig,
    pub alpha: f64,
    pub seed: u64,
    /// Keep per-feature p-values or statistics in the report.
    pub keep_statistics: bool,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self::desk()
    }
}

impl BenchmarkSpec {
    /// Scaled-down preset: 20 trials, n = 500, p = 100, 20 signals, lasso, K = 1000, b = 25.
    pub fn desk() -> Self {
        BenchmarkSpec {
            trials: 20,
            n: 500,
            p: 100,
            signals: 20,
            noise_sd: 0.5,
            weights: WeightRule::default(),
            models: vec![PredictorSpec::Lasso(LassoConfig::default())],
            variants: vec![Variant::Hrt { mode: HrtMode::Cv }],
            sampler: SamplerSource::Fitted,
            hrt: HrtConfig {
                nsamples: 1000,
                bootstrap: 25,
                ..HrtConfig::default()
            },
            alpha: 0.1,
            seed: 0,
            keep_statistics: false,
        }
    }

    /// Full-scale preset: 100 trials, n = 500, p = 500, 40 signals, MLP, b = 100.
    pub fn full_scale() -> Self {
        BenchmarkSpec {
            trials: 100,
            p: 500,
            signals: 40,
            models: vec![PredictorSpec::Mlp(Default::default())],
            hrt: HrtConfig {
                nsamples: 1000,
                bootstrap: 100,
                ..HrtConfig::default()
            },
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(HrtError::invalid("benchmark needs at least one trial"));
        }
        if self.p < 2 || self.n < 10 {
            return Err(HrtError::invalid("benchmark needs p >= 2 and n >= 10"));
        }
        if self.signals > self.p || self.signals % 4 != 0 {
            return Err(HrtError::invalid("signal count must be a multiple of 4 and at most p"));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(HrtError::invalid("noise sd must be finite and >= 0"));
        }
        let WeightRule::SignedUniform { low, high } = self.weights;
        if !(low >= 0.0 && low <= high && high.is_finite()) {
            return Err(HrtError::invalid("weight magnitudes need 0 <= low <= high < inf"));
        }
        if self.models.is_empty() || self.variants.is_empty() {
            return Err(HrtError::invalid("benchmark needs at least one model and one variant"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(HrtError::invalid("alpha must lie in (0, 1)"));
        }
        for m in &self.models {
            m.validate()?;
        }
        for v in &self.variants {
            self.variant_config(*v).validate()?;
        }
        Ok(())
    }

    fn variant_config(&self, v: Variant) -> HrtConfig {
        let mut cfg = HrtConfig {
            mode: v.mode(),
            ..self.hrt.clone()
        };
        if let Variant::Permutation { .. } = v {
            cfg.null_sampler = NullSampler::Permutation;
            cfg.calibration = Calibration::Off;
        }
        cfg
    }
}

/// One synthetic dataset with its ground truth.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub data: Dataset,
    /// `truth[j]` is true for signal features.
    pub truth: Vec<bool>,
    pub weights: Vec<f64>,
}

/// Draws one dataset: `x_j = (ρ + z_j) / 2` per row, and
/// `y = Σ_b [w x + w x + tanh(w x + w x)] + σ ε` over consecutive blocks of four.
pub fn gen_benchmark(spec: &BenchmarkSpec, rng: &RngStream) -> Result<Benchmark> {
    spec.validate()?;
    let (n, p) = (spec.n, spec.p);
    let WeightRule::SignedUniform { low, high } = spec.weights;
    let mut r = rng.purpose(Purpose::Data).rng();
    let weights: Vec<f64> = (0..spec.signals)
        .map(|_| {
            let mag = if high > low { r.random_range(low..=high) } else { low };
            if r.random::<bool>() {
                mag
            } else {
                -mag
            }
        })
        .collect();
    let mut x = Array2::zeros((n, p));
    let mut y = Array1::zeros(n);
    for i in 0..n {
        let rho: f64 = StandardNormal.sample(&mut r);
        for j in 0..p {
            let z: f64 = StandardNormal.sample(&mut r);
            x[[i, j]] = (rho + z) / 2.0;
        }
        let mut acc = 0.0;
        for b in 0..spec.signals / 4 {
            let k = 4 * b;
            acc += weights[k] * x[[i, k]]
                + weights[k + 1] * x[[i, k + 1]]
                + (weights[k + 2] * x[[i, k + 2]] + weights[k + 3] * x[[i, k + 3]]).tanh();
        }
        let eps: f64 = StandardNormal.sample(&mut r);
        y[i] = acc + spec.noise_sd * eps;
    }
    let truth = (0..p).map(|j| j < spec.signals).collect();
    Ok(Benchmark {
        data: Dataset::from_arrays(x, y)?,
        truth,
        weights,
    })
}

/// Closed-form complete conditional of feature `j` under the benchmark covariates:
/// zero mean, variance 1/2, pairwise covariance 1/4.
pub fn exact_conditional(p: usize, j: usize) -> Result<ConditionalModel> {
    let mean = Array1::zeros(p);
    let cov = Array2::from_shape_fn((p, p), |(a, b)| if a == b { 0.5 } else { 0.25 });
    let g = GaussianConditional::from_joint(mean.view(), cov.view(), j)?;
    ConditionalModel::from_gaussian(j, p, g)
}

/// A uniformly random permutation of column `j`.
pub fn marginal_permutation_sampler(data: &Dataset, j: usize, rng: &RngStream) -> Result<Vec<f64>> {
    if j >= data.n_features() {
        return Err(HrtError::invalid(format!("feature index {j} out of range")));
    }
    let mut col = data.features().column(j).to_vec();
    col.shuffle(&mut rng.rng());
    Ok(col)
}

/// `(power, FDR)` of a discovery set against the truth mask.
pub fn evaluate(discoveries: &[usize], truth: &[bool]) -> Result<(f64, f64)> {
    if let Some(&bad) = discoveries.iter().find(|&&j| j >= truth.len()) {
        return Err(HrtError::invalid(format!("discovery {bad} out of range")));
    }
    let mut unique = discoveries.to_vec();
    unique.sort_unstable();
    unique.dedup();
    let n_true = truth.iter().filter(|&&t| t).count();
    let hits = unique.iter().filter(|&&j| truth[j]).count();
    let false_hits = unique.len() - hits;
    let power = if n_true == 0 { 0.0 } else { hits as f64 / n_true as f64 };
    Ok((power, false_hits as f64 / unique.len().max(1) as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial: usize,
    pub model: String,
    pub variant: String,
    /// Out-of-fold (cv modes) or holdout r² of the predictor.
    pub r2: f64,
    pub power: f64,
    pub fdr: f64,
    pub discoveries: Vec<usize>,
    /// Per-feature p-values (BH arms) or risk changes (filter arms), when kept.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub statistics: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub model: String,
    pub variant: String,
    pub trials: usize,
    pub mean_power: f64,
    pub sd_power: f64,
    pub mean_fdr: f64,
    pub sd_fdr: f64,
    pub mean_r2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub spec: BenchmarkSpec,
    pub outcomes: Vec<TrialOutcome>,
    pub summaries: Vec<ArmSummary>,
}

impl BenchReport {
    pub fn summary(&self, model: &str, variant: &str) -> Option<&ArmSummary> {
        self.summaries.iter().find(|s| s.model == model && s.variant == variant)
    }

    /// `model,variant,trial,r2,power,fdr` rows with a header line.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["model", "variant", "trial", "r2", "power", "fdr"])?;
        for o in &self.outcomes {
            w.write_record([
                o.model.clone(),
                o.variant.clone(),
                o.trial.to_string(),
                o.r2.to_string(),
                o.power.to_string(),
                o.fdr.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| HrtError::Io(e.into_error()))?;
        String::from_utf8(bytes).map_err(|e| HrtError::invalid(e.to_string()))
    }
}

fn samplers_for(spec: &BenchmarkSpec, data: &Dataset, rng: &RngStream) -> Result<Vec<FeatureSampler>> {
    let features: Vec<usize> = (0..spec.p).collect();
    match spec.sampler {
        SamplerSource::Exact => features
            .iter()
            .map(|&j| exact_conditional(spec.p, j).map(FeatureSampler::Model))
            .collect(),
        SamplerSource::Fitted => {
            let cfg = HrtConfig {
                null_sampler: NullSampler::Conditional,
                ..spec.hrt.clone()
            };
            fit_samplers(data, &features, &cfg, rng)
        }
    }
}

/// Runs every model × variant arm on one trial. Conditional samplers and
/// pipelines are shared across arms.
pub fn run_trial(spec: &BenchmarkSpec, trial: usize) -> Result<Vec<TrialOutcome>> {
    let rng = RngStream::new(spec.seed).trial(trial as u64);
    let bench = gen_benchmark(spec, &rng)?;
    let data = &bench.data;
    let needs_conditional = spec
        .variants
        .iter()
        .any(|v| !matches!(v, Variant::Permutation { .. }));
    let conditional = if needs_conditional {
        Some(samplers_for(spec, data, &rng)?)
    } else {
        None
    };
    let permutation: Vec<FeatureSampler> = (0..spec.p).map(|feature| FeatureSampler::Permutation { feature }).collect();
    let mut out = Vec::new();
    for (m, model) in spec.models.iter().enumerate() {
        let model_rng = rng.child(m as u64);
        let mut holdout: Option<FittedPipeline> = None;
        let mut cv: Option<FittedPipeline> = None;
        for &variant in &spec.variants {
            let cfg = spec.variant_config(variant);
            let slot = if cfg.mode.is_cross_validated() { &mut cv } else { &mut holdout };
            if slot.is_none() {
                *slot = Some(fit_pipeline(data, model, &cfg, &model_rng)?);
            }
            let pipeline = slot.as_ref().expect("pipeline fitted above");
            let samplers = match variant {
                Variant::Permutation { .. } => &permutation,
                _ => conditional.as_ref().expect("conditional samplers fitted"),
            };
            let (report, stats) = match variant {
                Variant::Erk { .. } => {
                    let w = erk_statistics(pipeline, data, samplers, cfg.risk, &model_rng)?;
                    (erk_select(&w, spec.alpha)?, w)
                }
                _ => {
                    let results = test_features(pipeline, data, samplers, &cfg, &model_rng)?;
                    let p: Vec<f64> = results.iter().map(|r| r.p_value).collect();
                    (bh(&p, spec.alpha)?, p)
                }
            };
            let (power, fdr) = evaluate(&report.discoveries, &bench.truth)?;
            out.push(TrialOutcome {
                trial,
                model: model.family().name().to_string(),
                variant: variant.label(),
                r2: pipeline.r2(),
                power,
                fdr,
                discoveries: report.discoveries,
                statistics: spec.keep_statistics.then_some(stats),
            });
        }
    }
    Ok(out)
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Runs all trials and aggregates per arm. Deterministic given `spec.seed`.
pub fn run_trials(spec: &BenchmarkSpec) -> Result<BenchReport> {
    spec.validate()?;
    let per_trial: Vec<Vec<TrialOutcome>> = (0..spec.trials)
        .into_par_iter()
        .map(|t| run_trial(spec, t).map_err(|e| HrtError::invalid(format!("trial {t}: {e}"))))
        .collect::<Result<_>>()?;
    let outcomes: Vec<TrialOutcome> = per_trial.into_iter().flatten().collect();
    let mut arms: Vec<(String, String)> = Vec::new();
    for o in &outcomes {
        let key = (o.model.clone(), o.variant.clone());
        if !arms.contains(&key) {
            arms.push(key);
        }
    }
    let summaries = arms
        .into_iter()
        .map(|(model, variant)| {
            let rows: Vec<&TrialOutcome> = outcomes
                .iter()
                .filter(|o| o.model == model && o.variant == variant)
                .collect();
            let col = |f: fn(&TrialOutcome) -> f64| rows.iter().map(|o| f(o)).collect::<Vec<f64>>();
            let (mean_power, sd_power) = mean_sd(&col(|o| o.power));
            let (mean_fdr, sd_fdr) = mean_sd(&col(|o| o.fdr));
            let (mean_r2, _) = mean_sd(&col(|o| o.r2));
            ArmSummary {
                model,
                variant,
                trials: rows.len(),
                mean_power,
                sd_power,
                mean_fdr,
                sd_fdr,
                mean_r2,
            }
        })
        .collect();
    Ok(BenchReport {
        spec: spec.clone(),
        outcomes,
        summaries,
    })
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(HrtError::invalid("spearman needs two equal-length samples of size >= 2"));
    }
    let ranks = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&x, &y| v[x].total_cmp(&v[y]));
        let mut r = vec![0.0; v.len()];
        let mut s = 0;
        while s < idx.len() {
            let mut e = s;
            while e + 1 < idx.len() && v[idx[e + 1]] == v[idx[s]] {
                e += 1;
            }
            let avg = (s + e) as f64 / 2.0 + 1.0;
            for &k in &idx[s..=e] {
                r[k] = avg;
            }
            s = e + 1;
        }
        r
    };
    let (ra, rb) = (ranks(a), ranks(b));
    let (ma, _) = mean_sd(&ra);
    let (mb, _) = mean_sd(&rb);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return Err(HrtError::invalid("spearman of a constant sample"));
    }
    Ok(cov / (va * vb).sqrt())
}
