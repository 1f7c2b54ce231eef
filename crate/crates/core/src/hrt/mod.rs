//! The randomization-test engines: holdout, cross-validated, and grid-approximated
//! variants, plus importance-weighted calibration against an imperfect sampler.

mod engine;
mod weights;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibrate::{select_quantiles, KsSearchConfig};
use crate::cde::{
    check_quantiles, fit_conditional_arrays, fit_ensemble_arrays, BootstrapEnsemble, CdeSpec, ConditionalModel,
    DiscreteConfig,
};
use crate::data::{Dataset, FeatureKind};
use crate::error::{HrtError, Result};
use crate::models::{cv_fit, fit, r_squared, CvFit, FittedPredictor, PredictorSpec};
use crate::risk::RiskFunction;
use crate::rng::{Purpose, RngStream};
use crate::split::{make_holdout, SplitPlan};

pub(crate) use engine::{risk_change, Scorer};
pub use engine::{hrt_basic, hrt_cv, hrt_fast, hrt_fast_cv};
pub use weights::{conservative_weight, weighted_pvalue, WeightAggregation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HrtMode {
    /// One model, one holdout split.
    Basic,
    /// M fold models; statistic is the mean held-out fold risk.
    #[default]
    Cv,
    /// Holdout statistic with grid-cached per-sample risks.
    Fast,
    /// Cross-validated statistic with grid-cached per-sample risks.
    FastCv,
}

impl HrtMode {
    pub fn name(self) -> &'static str {
        match self {
            HrtMode::Basic => "basic",
            HrtMode::Cv => "cv",
            HrtMode::Fast => "fast",
            HrtMode::FastCv => "fast_cv",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "basic" => HrtMode::Basic,
            "cv" => HrtMode::Cv,
            "fast" => HrtMode::Fast,
            "fast_cv" | "fast-cv" => HrtMode::FastCv,
            other => return Err(HrtError::invalid(format!("unknown mode `{other}`"))),
        })
    }

    pub fn is_cross_validated(self) -> bool {
        matches!(self, HrtMode::Cv | HrtMode::FastCv)
    }
}

/// Importance-weight calibration of the null samples.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Calibration {
    /// Unit weights; the proposal is trusted as the true conditional.
    Off,
    /// Fixed bootstrap quantile band `(l, u)` in percent.
    Fixed { l: f64, u: f64 },
    /// Band chosen per feature by the one-way KS search.
    #[default]
    Adaptive,
}

/// Source of null columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NullSampler {
    /// Draws from a fitted complete conditional.
    #[default]
    Conditional,
    /// Shuffles the observed column; valid only for independent features.
    Permutation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HrtConfig {
    /// Null sample count `K`.
    pub nsamples: usize,
    pub mode: HrtMode,
    /// Grid points per row `S` for continuous features in the grid engines.
    pub grid_size: usize,
    /// Fold count `M` for the cross-validated engines.
    pub folds: usize,
    /// Holdout fraction for the single-split engines.
    pub test_fraction: f64,
    pub risk: RiskFunction,
    pub null_sampler: NullSampler,
    /// Estimator for continuous features.
    pub cde: CdeSpec,
    /// Estimator for features with a declared discrete support.
    pub discrete: DiscreteConfig,
    pub calibration: Calibration,
    /// Bootstrap ensemble size `b` when calibrating.
    pub bootstrap: usize,
    pub ks: KsSearchConfig,
    pub aggregation: WeightAggregation,
}

impl Default for HrtConfig {
    fn default() -> Self {
        HrtConfig {
            nsamples: 1000,
            mode: HrtMode::Cv,
            grid_size: 25,
            folds: 5,
            test_fraction: 0.2,
            risk: RiskFunction::SquaredError,
            null_sampler: NullSampler::Conditional,
            cde: CdeSpec::default(),
            discrete: DiscreteConfig::default(),
            calibration: Calibration::Adaptive,
            bootstrap: 100,
            ks: KsSearchConfig::default(),
            aggregation: WeightAggregation::GeometricMean,
        }
    }
}

impl HrtConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nsamples == 0 {
            return Err(HrtError::invalid("number of null samples K must be >= 1"));
        }
        if matches!(self.mode, HrtMode::Fast | HrtMode::FastCv) && self.grid_size < 2 {
            return Err(HrtError::invalid("grid size S must be >= 2 in fast mode"));
        }
        if self.mode.is_cross_validated() && self.folds < 2 {
            return Err(HrtError::invalid("fold count M must be >= 2 in cv mode"));
        }
        if !self.mode.is_cross_validated() && !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(HrtError::invalid("test fraction must lie in (0, 1)"));
        }
        if self.null_sampler == NullSampler::Permutation {
            if self.calibration != Calibration::Off {
                return Err(HrtError::invalid("permutation nulls cannot be calibrated"));
            }
            if matches!(self.mode, HrtMode::Fast | HrtMode::FastCv) {
                return Err(HrtError::invalid("permutation nulls are not supported by the grid engines"));
            }
        }
        match &self.calibration {
            Calibration::Off => {}
            Calibration::Fixed { l, u } => {
                check_quantiles(*l, *u)?;
                self.check_bootstrap()?;
            }
            Calibration::Adaptive => {
                self.ks.validate()?;
                self.check_bootstrap()?;
            }
        }
        self.cde.validate()?;
        if matches!(self.cde, CdeSpec::EmpiricalDiscrete(_)) {
            return Err(HrtError::invalid(
                "the continuous-feature estimator cannot be empirical_discrete",
            ));
        }
        self.discrete.validate()
    }

    fn check_bootstrap(&self) -> Result<()> {
        if self.bootstrap < 2 {
            return Err(HrtError::invalid("bootstrap ensemble size b must be >= 2"));
        }
        Ok(())
    }
}

/// The null-sample source handed to an engine.
#[derive(Debug, Clone, Copy)]
pub enum Sampler<'a> {
    /// Draw from this conditional; unit weights.
    Conditional(&'a ConditionalModel),
    /// Draw from member 0 of the ensemble, weight by the `(l, u)` band.
    Calibrated {
        ensemble: &'a BootstrapEnsemble,
        l: f64,
        u: f64,
    },
    /// Shuffle the observed column; unit weights.
    Permutation,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub mode: HrtMode,
    pub sampler: String,
    /// Quantile band `(l, u)` when calibrated.
    pub band: Option<(f64, f64)>,
    /// Null samples whose risk was at most the observed risk.
    pub indicator_count: usize,
    pub weight_sum: f64,
    pub indicator_weight_sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureResult {
    pub feature: usize,
    pub p_value: f64,
    /// Observed risk.
    pub t: f64,
    pub null_risks: Vec<f64>,
    pub weights: Vec<f64>,
    pub diagnostics: Diagnostics,
}

impl FeatureResult {
    pub fn k(&self) -> usize {
        self.null_risks.len()
    }
}

/// A fitted per-feature null source that engines can borrow from.
#[derive(Debug, Clone)]
pub enum FeatureSampler {
    Model(ConditionalModel),
    Ensemble { ensemble: BootstrapEnsemble, l: f64, u: f64 },
    Permutation { feature: usize },
}

impl FeatureSampler {
    pub fn as_sampler(&self) -> Sampler<'_> {
        match self {
            FeatureSampler::Model(m) => Sampler::Conditional(m),
            FeatureSampler::Ensemble { ensemble, l, u } => Sampler::Calibrated {
                ensemble,
                l: *l,
                u: *u,
            },
            FeatureSampler::Permutation { .. } => Sampler::Permutation,
        }
    }

    pub fn feature(&self) -> usize {
        match self {
            FeatureSampler::Model(m) => m.target(),
            FeatureSampler::Ensemble { ensemble, .. } => ensemble.target(),
            FeatureSampler::Permutation { feature } => *feature,
        }
    }
}

fn cde_for<'a>(kind: &FeatureKind, cfg: &'a HrtConfig) -> std::borrow::Cow<'a, CdeSpec> {
    match kind {
        FeatureKind::Discrete(_) => std::borrow::Cow::Owned(CdeSpec::EmpiricalDiscrete(cfg.discrete.clone())),
        FeatureKind::Continuous => std::borrow::Cow::Borrowed(&cfg.cde),
    }
}

/// Fits the null source for feature `j` on all rows of `data` (features only).
pub fn fit_sampler(data: &Dataset, j: usize, cfg: &HrtConfig, rng: &RngStream) -> Result<FeatureSampler> {
    if j >= data.n_features() {
        return Err(HrtError::invalid(format!("feature index {j} out of range")));
    }
    if cfg.null_sampler == NullSampler::Permutation {
        return Ok(FeatureSampler::Permutation { feature: j });
    }
    let x = data.features();
    let kind = data.kind(j);
    let spec = cde_for(kind, cfg);
    let stream = rng.feature(j).purpose(Purpose::Sampler);
    match &cfg.calibration {
        Calibration::Off => Ok(FeatureSampler::Model(fit_conditional_arrays(x, j, kind, &spec, &stream)?)),
        Calibration::Fixed { l, u } => Ok(FeatureSampler::Ensemble {
            ensemble: fit_ensemble_arrays(x, j, kind, cfg.bootstrap, &spec, &stream)?,
            l: *l,
            u: *u,
        }),
        Calibration::Adaptive => {
            let ensemble = fit_ensemble_arrays(x, j, kind, cfg.bootstrap, &spec, &stream)?;
            // One threshold stream per run so the simulation is shared across features.
            let (l, u) = select_quantiles(&ensemble, x, kind, &cfg.ks, &rng.purpose(Purpose::Calibration))?;
            Ok(FeatureSampler::Ensemble { ensemble, l, u })
        }
    }
}

/// Fits null sources for several features in parallel.
pub fn fit_samplers(data: &Dataset, features: &[usize], cfg: &HrtConfig, rng: &RngStream) -> Result<Vec<FeatureSampler>> {
    cfg.validate()?;
    features
        .par_iter()
        .map(|&j| fit_sampler(data, j, cfg, rng).map_err(|e| e.in_feature(j)))
        .collect()
}

/// The predictive side of a run: either a single holdout model or a cross-validated fit.
#[derive(Debug)]
pub enum FittedPipeline {
    Holdout {
        plan: SplitPlan,
        model: FittedPredictor,
        test: Dataset,
        /// Holdout coefficient of determination.
        r2: f64,
    },
    Cv(CvFit),
}

impl FittedPipeline {
    pub fn r2(&self) -> f64 {
        match self {
            FittedPipeline::Holdout { r2, .. } => *r2,
            FittedPipeline::Cv(cv) => cv.r2,
        }
    }
}

/// Fits the predictor(s) the configured mode needs.
pub fn fit_pipeline(data: &Dataset, spec: &PredictorSpec, cfg: &HrtConfig, rng: &RngStream) -> Result<FittedPipeline> {
    spec.validate()?;
    if cfg.mode.is_cross_validated() {
        return Ok(FittedPipeline::Cv(cv_fit(spec, data, cfg.folds, cfg.risk, rng)?));
    }
    let plan = make_holdout(data.n_samples(), cfg.test_fraction, &rng.purpose(Purpose::Split))?;
    let SplitPlan::Holdout { train, test } = &plan else {
        unreachable!("make_holdout returns a holdout plan")
    };
    let model = fit(spec, &data.select_rows(train), &rng.purpose(Purpose::Fit))?;
    let test = data.select_rows(test);
    let pred = model.predict(test.features())?;
    let r2 = r_squared(test.response(), pred.view());
    Ok(FittedPipeline::Holdout { plan, model, test, r2 })
}

/// Runs the configured engine for every sampler's feature.
pub fn test_features(
    pipeline: &FittedPipeline,
    data: &Dataset,
    samplers: &[FeatureSampler],
    cfg: &HrtConfig,
    rng: &RngStream,
) -> Result<Vec<FeatureResult>> {
    samplers
        .par_iter()
        .map(|s| {
            let j = s.feature();
            let stream = rng.feature(j);
            let sampler = s.as_sampler();
            let res = match (cfg.mode, pipeline) {
                (HrtMode::Basic, FittedPipeline::Holdout { model, test, .. }) => {
                    hrt_basic(model, test, j, sampler, cfg, &stream)
                }
                (HrtMode::Fast, FittedPipeline::Holdout { model, test, .. }) => {
                    hrt_fast(model, test, j, sampler, cfg, &stream)
                }
                (HrtMode::Cv, FittedPipeline::Cv(cv)) => hrt_cv(cv, data, j, sampler, cfg, &stream),
                (HrtMode::FastCv, FittedPipeline::Cv(cv)) => hrt_fast_cv(cv, data, j, sampler, cfg, &stream),
                (mode, _) => Err(HrtError::invalid(format!(
                    "mode `{}` does not match the fitted pipeline",
                    mode.name()
                ))),
            };
            res.map_err(|e| e.in_feature(j))
        })
        .collect()
}

/// Output of [`run_hrt`].
#[derive(Debug)]
pub struct HrtRun {
    pub pipeline: FittedPipeline,
    pub results: Vec<FeatureResult>,
}

/// Fits the predictor(s) and per-feature samplers, then tests each requested feature.
pub fn run_hrt(
    data: &Dataset,
    spec: &PredictorSpec,
    features: Option<&[usize]>,
    cfg: &HrtConfig,
    rng: &RngStream,
) -> Result<HrtRun> {
    cfg.validate()?;
    let all: Vec<usize> = (0..data.n_features()).collect();
    let features = features.unwrap_or(&all);
    if let Some(&bad) = features.iter().find(|&&j| j >= data.n_features()) {
        return Err(HrtError::invalid(format!("feature index {bad} out of range")));
    }
    let pipeline = fit_pipeline(data, spec, cfg, rng)?;
    let samplers = fit_samplers(data, features, cfg, rng)?;
    let results = test_features(&pipeline, data, &samplers, cfg, rng)?;
    Ok(HrtRun { pipeline, results })
}

/// Held-out rows used for scoring in single-split modes, for callers that need them.
pub fn holdout_rows(pipeline: &FittedPipeline) -> Option<&[usize]> {
    match pipeline {
        FittedPipeline::Holdout {
            plan: SplitPlan::Holdout { test, .. },
            ..
        } => Some(test),
        _ => None,
    }
}
