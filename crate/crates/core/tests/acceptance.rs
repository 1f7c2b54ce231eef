//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run a subset by passing name fragments, e.g. `cargo test --test acceptance -- oracle`.
//! Failures are reported without failing the target unless `HRT_ACCEPTANCE_STRICT` is set.

use std::time::{Duration, Instant};

use hrt_core::bench::{run_trials, BenchmarkSpec, Variant};
use hrt_core::calibrate::{ks_minus, ks_plus};
use hrt_core::cde::{BootstrapEnsemble, ConditionalModel, GaussianConditional};
use hrt_core::data::{Dataset, FeatureKind};
use hrt_core::hrt::{
    fit_pipeline, fit_sampler, hrt_basic, hrt_fast, test_features, weighted_pvalue, Calibration, FeatureSampler,
    FittedPipeline, HrtConfig, HrtMode, Sampler, WeightAggregation,
};
use hrt_core::models::{FittedPredictor, LinearModel, MlpConfig, PredictorSpec};
use hrt_core::pvalue::pvalue_unweighted;
use hrt_core::rng::RngStream;
use hrt_core::select::{bh, erk_threshold};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn normal(r: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(r)
}

/// Rows with unit variances and pairwise correlation `rho`.
fn equicorrelated(n: usize, p: usize, rho: f64, r: &mut ChaCha8Rng) -> Array2<f64> {
    let mut x = Array2::zeros((n, p));
    for i in 0..n {
        let shared = normal(r);
        for j in 0..p {
            x[[i, j]] = rho.sqrt() * shared + (1.0 - rho).sqrt() * normal(r);
        }
    }
    x
}

/// Closed-form conditional of one coordinate given the rest for unit-variance equicorrelation.
fn equicorrelated_conditional(p: usize, j: usize, rho: f64) -> ConditionalModel {
    let denom = 1.0 + (p as f64 - 2.0) * rho;
    let beta = rho / denom;
    let var = 1.0 - (p as f64 - 1.0) * rho * rho / denom;
    let g = GaussianConditional {
        intercept: 0.0,
        coef: Array1::from_elem(p - 1, beta),
        sd: var.sqrt(),
    };
    ConditionalModel::from_gaussian(j, p, g).unwrap()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut ranks = vec![0.0; v.len()];
    for (i, &a) in v.iter().enumerate() {
        let below = v.iter().filter(|&&b| b < a).count() as f64;
        let equal = v.iter().filter(|&&b| b == a).count() as f64;
        ranks[i] = below + (equal + 1.0) / 2.0;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn pvalue_kernel() -> Outcome {
    let start = Instant::now();
    let mut r = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    let mut unit_exact = true;
    for _ in 0..100 {
        let k = r.random_range(1..=300);
        // Quarter-integer grid forces ties between t and the nulls.
        let grid = |r: &mut ChaCha8Rng| r.random_range(-40..=40) as f64 / 4.0;
        let t = grid(&mut r);
        let nulls: Vec<f64> = (0..k).map(|_| grid(&mut r)).collect();
        let weights: Vec<f64> = (0..k)
            .map(|_| if r.random_bool(0.1) { 0.0 } else { r.random_range(0.0..3.0) })
            .collect();
        let mut num = 1.0;
        let mut den = 1.0;
        for (&v, &w) in nulls.iter().zip(&weights) {
            if v <= t {
                num += w;
            }
            den += w;
        }
        let got = weighted_pvalue(t, &nulls, &weights).unwrap();
        worst = worst.max((got - num / den).abs());

        let ones = vec![1.0; k];
        let hits = nulls.iter().filter(|&&v| v <= t).count();
        let formula = (1 + hits) as f64 / (k + 1) as f64;
        let unit = weighted_pvalue(t, &nulls, &ones).unwrap();
        let plain = pvalue_unweighted(t, &nulls).unwrap();
        unit_exact &= unit == formula && plain == formula;
    }
    let elapsed = start.elapsed();
    Outcome {
        pass: worst <= 1e-12 && unit_exact && elapsed < Duration::from_secs(1),
        detail: format!("max |err| {worst:.2e}, unit weights exact: {unit_exact}, {elapsed:.2?}"),
    }
}

/// Fraction of p-values at most 0.1 for a null feature under the exact conditional.
fn null_cdf(mode: HrtMode, reps: usize) -> f64 {
    let (n, p, rho) = (250, 10, 0.5);
    let exact = FeatureSampler::Model(equicorrelated_conditional(p, 0, rho));
    let cfg = HrtConfig {
        nsamples: 200,
        mode,
        calibration: Calibration::Off,
        ..HrtConfig::default()
    };
    let spec = PredictorSpec::Ols { ridge_fallback: true };
    let hits: usize = (0..reps)
        .map(|rep| {
            let stream = RngStream::new(2024).replicate(rep as u64);
            let mut r = stream.rng();
            let x = equicorrelated(n, p, rho, &mut r);
            let y = Array1::from_shape_fn(n, |i| x[[i, 1]] + x[[i, 2]] - x[[i, 3]] + 0.5 * x[[i, 4]] + normal(&mut r));
            let data = Dataset::from_arrays(x, y).unwrap();
            let pipeline = fit_pipeline(&data, &spec, &cfg, &stream).unwrap();
            let res = test_features(&pipeline, &data, std::slice::from_ref(&exact), &cfg, &stream).unwrap();
            usize::from(res[0].p_value <= 0.1)
        })
        .sum();
    hits as f64 / reps as f64
}

fn null_validity() -> Outcome {
    let start = Instant::now();
    let basic = null_cdf(HrtMode::Basic, 500);
    let cv = null_cdf(HrtMode::Cv, 500);
    let elapsed = start.elapsed();
    Outcome {
        pass: (0.05..=0.15).contains(&basic) && cv <= 0.15 && elapsed <= Duration::from_secs(600),
        detail: format!("basic F(0.1) = {basic:.3}, cv F(0.1) = {cv:.3}, {elapsed:.2?}"),
    }
}

fn arm_means(report: &hrt_core::bench::BenchReport, model: &str, variant: &str) -> (f64, f64) {
    let s = report.summary(model, variant).expect("arm present");
    (s.mean_power, s.mean_fdr)
}

fn desk_benchmark() -> Outcome {
    let start = Instant::now();
    let spec = BenchmarkSpec {
        variants: vec![
            Variant::Hrt { mode: HrtMode::Cv },
            Variant::Hrt { mode: HrtMode::Basic },
            Variant::Permutation { mode: HrtMode::Cv },
        ],
        ..BenchmarkSpec::desk()
    };
    let report = run_trials(&spec).unwrap();
    let elapsed = start.elapsed();
    let (cv_power, cv_fdr) = arm_means(&report, "lasso", "cv");
    let (basic_power, basic_fdr) = arm_means(&report, "lasso", "basic");
    let (_, perm_fdr) = arm_means(&report, "lasso", "permutation_cv");
    Outcome {
        pass: cv_fdr <= 0.15 && perm_fdr >= 0.40 && cv_power > basic_power && elapsed <= Duration::from_secs(7200),
        detail: format!(
            "cv power {cv_power:.3} fdr {cv_fdr:.3}; basic power {basic_power:.3} fdr {basic_fdr:.3}; \
             permutation fdr {perm_fdr:.3}; {elapsed:.2?}"
        ),
    }
}

fn model_quality() -> Outcome {
    let start = Instant::now();
    let small_mlp = MlpConfig {
        hidden: vec![32],
        learning_rate: 1e-3,
        epochs: 100,
        ..MlpConfig::default()
    };
    let mut models: Vec<PredictorSpec> = ["ols", "ridge", "lasso", "elastic_net", "kernel_ridge_poly3"]
        .iter()
        .map(|m| PredictorSpec::from_name(m).unwrap())
        .collect();
    models.push(PredictorSpec::Mlp(small_mlp));
    let mut spec = BenchmarkSpec {
        trials: 10,
        models,
        variants: vec![Variant::Hrt { mode: HrtMode::Cv }, Variant::Erk { mode: HrtMode::Cv }],
        ..BenchmarkSpec::desk()
    };
    spec.hrt.calibration = Calibration::Off;
    let report = run_trials(&spec).unwrap();
    let cv: Vec<_> = report.outcomes.iter().filter(|o| o.variant == "cv").collect();
    let r2: Vec<f64> = cv.iter().map(|o| o.r2).collect();
    let power: Vec<f64> = cv.iter().map(|o| o.power).collect();
    let rho = pearson(&average_ranks(&r2), &average_ranks(&power));
    let erk: Vec<f64> = report.outcomes.iter().filter(|o| o.variant == "erk_cv").map(|o| o.power).collect();
    let gap = (mean(&erk) - mean(&power)).abs();
    let per_model: Vec<String> = report
        .summaries
        .iter()
        .filter(|s| s.variant == "cv")
        .map(|s| format!("{} r2 {:.3} power {:.3}", s.model, s.mean_r2, s.mean_power))
        .collect();
    Outcome {
        pass: rho > 0.3 && gap <= 0.10,
        detail: format!(
            "spearman {rho:.3}; cv power {:.3} vs erk {:.3}; [{}]; {:.2?}",
            mean(&power),
            mean(&erk),
            per_model.join(", "),
            start.elapsed()
        ),
    }
}

fn fast_fidelity_and_speed() -> Outcome {
    let start = Instant::now();
    // Discrete feature: x0 ∈ {0, 1, 2} driven by x1.
    let mut worst: f64 = 0.0;
    for seed in 0..10u64 {
        let stream = RngStream::new(500 + seed);
        let mut r = stream.rng();
        let n = 300;
        let mut x = Array2::zeros((n, 4));
        for i in 0..n {
            for j in 1..4 {
                x[[i, j]] = normal(&mut r);
            }
            let z = x[[i, 1]] + normal(&mut r);
            x[[i, 0]] = if z < -0.5 { 0.0 } else if z < 0.5 { 1.0 } else { 2.0 };
        }
        let y = Array1::from_shape_fn(n, |i| 0.6 * x[[i, 0]] + x[[i, 1]] - x[[i, 2]] + normal(&mut r));
        let kinds = vec![
            FeatureKind::discrete(vec![0.0, 1.0, 2.0]).unwrap(),
            FeatureKind::Continuous,
            FeatureKind::Continuous,
            FeatureKind::Continuous,
        ];
        let names = (0..4).map(|j| format!("x{j}")).collect();
        let data = Dataset::new(x, y, names, kinds).unwrap();
        let cfg = HrtConfig {
            nsamples: 5000,
            mode: HrtMode::Basic,
            calibration: Calibration::Off,
            ..HrtConfig::default()
        };
        let spec = PredictorSpec::Ols { ridge_fallback: true };
        let FittedPipeline::Holdout { model, test, .. } = fit_pipeline(&data, &spec, &cfg, &stream).unwrap() else {
            unreachable!()
        };
        let sampler = fit_sampler(&data, 0, &cfg, &stream).unwrap();
        let basic = hrt_basic(&model, &test, 0, sampler.as_sampler(), &cfg, &stream.child(1)).unwrap();
        let fast = hrt_fast(&model, &test, 0, sampler.as_sampler(), &cfg, &stream.child(1)).unwrap();
        worst = worst.max((basic.p_value - fast.p_value).abs());
    }

    // Continuous feature with an MLP: K = 10⁴, n′ = 100, S = 25.
    let stream = RngStream::new(77);
    let mut r = stream.rng();
    let (n, p) = (500, 20);
    let x = equicorrelated(n, p, 0.3, &mut r);
    let y = Array1::from_shape_fn(n, |i| x[[i, 0]] + x[[i, 1]] * x[[i, 2]] + x[[i, 3]].sin() + 0.5 * normal(&mut r));
    let data = Dataset::from_arrays(x, y).unwrap();
    let cfg = HrtConfig {
        nsamples: 10_000,
        grid_size: 25,
        test_fraction: 0.2,
        mode: HrtMode::Basic,
        calibration: Calibration::Off,
        ..HrtConfig::default()
    };
    let mlp = PredictorSpec::Mlp(MlpConfig {
        epochs: 50,
        learning_rate: 1e-3,
        ..MlpConfig::default()
    });
    let FittedPipeline::Holdout { model, test, .. } = fit_pipeline(&data, &mlp, &cfg, &stream).unwrap() else {
        unreachable!()
    };
    let sampler = FeatureSampler::Model(equicorrelated_conditional(p, 0, 0.3));
    let t0 = Instant::now();
    let basic = hrt_basic(&model, &test, 0, sampler.as_sampler(), &cfg, &stream).unwrap();
    let basic_time = t0.elapsed();
    let t1 = Instant::now();
    let fast = hrt_fast(&model, &test, 0, sampler.as_sampler(), &cfg, &stream).unwrap();
    let fast_time = t1.elapsed();
    let speedup = basic_time.as_secs_f64() / fast_time.as_secs_f64();
    let elapsed = start.elapsed();
    Outcome {
        pass: worst <= 0.02 && speedup >= 10.0 && test.n_samples() == 100 && elapsed <= Duration::from_secs(900),
        detail: format!(
            "discrete max |Δp| {worst:.4}; continuous basic {basic_time:.2?} vs fast {fast_time:.2?} \
             ({speedup:.1}x, p {:.3} vs {:.3}); {elapsed:.2?}",
            basic.p_value, fast.p_value
        ),
    }
}

fn conservativeness() -> Outcome {
    let start = Instant::now();
    let (n, p, rho) = (20, 3, 0.5);
    let mut r = ChaCha8Rng::seed_from_u64(9);
    let x = equicorrelated(n, p, rho, &mut r);
    let y = Array1::from_shape_fn(n, |i| 0.1 * x[[i, 0]] + x[[i, 1]] + normal(&mut r));
    let test = Dataset::from_arrays(x, y).unwrap();
    let model = FittedPredictor::from_linear(LinearModel {
        coef: Array1::from(vec![0.1, 1.0, 0.0]),
        intercept: 0.0,
    });

    let truth = equicorrelated_conditional(p, 0, rho);
    let cond_sd = truth.gaussian().unwrap().sd;
    let shifted = |delta: f64| {
        let g = GaussianConditional {
            intercept: delta * cond_sd,
            ..truth.gaussian().unwrap().clone()
        };
        ConditionalModel::from_gaussian(0, p, g).unwrap()
    };
    // Member 0 is the proposal Q; the true P is a member, so a min/max band contains it.
    let ensemble = BootstrapEnsemble::from_members(vec![shifted(0.3), shifted(0.0), shifted(0.1), shifted(0.2)]).unwrap();
    let band = Sampler::Calibrated {
        ensemble: &ensemble,
        l: 0.0,
        u: 100.0,
    };

    let oracle_cfg = HrtConfig {
        nsamples: 100_000,
        ..HrtConfig::default()
    };
    let oracle = hrt_basic(&model, &test, 0, Sampler::Conditional(&truth), &oracle_cfg, &RngStream::new(1)).unwrap();
    let p_true = oracle.diagnostics.indicator_count as f64 / oracle.k() as f64;
    let oracle_se = (p_true * (1.0 - p_true) / oracle.k() as f64).sqrt();

    let cfg = HrtConfig {
        nsamples: 1000,
        aggregation: WeightAggregation::Product,
        ..HrtConfig::default()
    };
    let reps = 2000;
    let mut weighted = Vec::with_capacity(reps);
    let mut naive = Vec::with_capacity(reps);
    for rep in 0..reps {
        let stream = RngStream::new(10_000 + rep as u64);
        let res = hrt_basic(&model, &test, 0, band, &cfg, &stream).unwrap();
        weighted.push(res.p_value);
        naive.push(pvalue_unweighted(res.t, &res.null_risks).unwrap());
    }
    let m = mean(&weighted);
    let se = (sd(&weighted).powi(2) / reps as f64 + oracle_se.powi(2)).sqrt();
    let elapsed = start.elapsed();
    Outcome {
        pass: m >= p_true - 2.0 * se && elapsed <= Duration::from_secs(600),
        detail: format!(
            "mean weighted p {m:.4} vs oracle p {p_true:.4} (2se {:.4}); unweighted Q-sampled mean {:.4}; {elapsed:.2?}",
            2.0 * se,
            mean(&naive)
        ),
    }
}

fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, piv);
        b.swap(c, piv);
        for i in c + 1..n {
            let f = a[i][c] / a[c][c];
            for k in c..n {
                a[i][k] -= f * a[c][k];
            }
            b[i] -= f * b[c];
        }
    }
    let mut out = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * out[k]).sum();
        out[i] = (b[i] - s) / a[i][i];
    }
    out
}

fn oracle_equivalences() -> Outcome {
    let start = Instant::now();
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let mut notes = Vec::new();

    // ERK threshold against a grid scan: integer-valued statistics make the
    // integer grid hit every feasibility interval's right end.
    let mut erk_ok = 0;
    for _ in 0..200 {
        let len = r.random_range(1..60);
        let w: Vec<f64> = (0..len).map(|_| r.random_range(-6..=20) as f64).collect();
        let alpha = r.random_range(0.05..0.5);
        let feasible = |omega: f64| {
            let neg = w.iter().filter(|&&v| v <= -omega).count() as f64;
            let pos = w.iter().filter(|&&v| v >= omega).count() as f64;
            pos > 0.0 && (1.0 + neg) / pos <= alpha
        };
        let max = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let first = (0..=max as usize).map(|g| g as f64).find(|&g| feasible(g));
        let want = first.map_or(f64::INFINITY, |g| {
            std::iter::once(0.0)
                .chain(w.iter().map(|v| v.abs()))
                .filter(|&c| c >= g)
                .fold(f64::INFINITY, f64::min)
        });
        erk_ok += usize::from(erk_threshold(&w, alpha).unwrap() == want);
    }
    notes.push(format!("erk {erk_ok}/200"));

    // BH against k* = max{k : #{p_i <= αk/m} >= k}.
    let mut bh_ok = 0;
    for _ in 0..500 {
        let m = r.random_range(1..80);
        let pv: Vec<f64> = (0..m)
            .map(|_| {
                if r.random_bool(0.3) {
                    r.random_range(1..=1000) as f64 / 1e5
                } else {
                    r.random_range(1..=1000) as f64 / 1e3
                }
            })
            .collect();
        let alpha = r.random_range(0.01..0.3);
        let kstar = (1..=m)
            .filter(|&k| pv.iter().filter(|&&p| p <= alpha * k as f64 / m as f64).count() >= k)
            .max()
            .unwrap_or(0);
        let want: Vec<usize> = if kstar == 0 {
            Vec::new()
        } else {
            (0..m).filter(|&i| pv[i] <= alpha * kstar as f64 / m as f64).collect()
        };
        bh_ok += usize::from(bh(&pv, alpha).unwrap().discoveries == want);
    }
    notes.push(format!("bh {bh_ok}/500"));

    // KS statistics against a 10⁴-point grid over c.
    let mut ks_err: f64 = 0.0;
    for _ in 0..100 {
        let len = r.random_range(1..200);
        let power = r.random_range(0.5..2.0);
        let v: Vec<f64> = (0..len).map(|_| r.random::<f64>().powf(power)).collect();
        let (mut plus, mut minus) = (0.0f64, 0.0f64);
        for g in 0..=10_000 {
            let c = g as f64 / 10_000.0;
            let f = v.iter().filter(|&&x| x <= c).count() as f64 / len as f64;
            plus = plus.max(c - f);
            minus = minus.max(f - c);
        }
        ks_err = ks_err.max((ks_plus(&v).unwrap() - plus).abs());
        ks_err = ks_err.max((ks_minus(&v).unwrap() - minus).abs());
    }
    notes.push(format!("ks max |err| {ks_err:.2e}"));

    // Gaussian conditional moments from 10⁵ draws against the closed form.
    let p = 4;
    let a = Array2::from_shape_fn((p, p), |_| normal(&mut r));
    let cov = a.dot(&a.t()) + Array2::<f64>::eye(p);
    let mu = Array1::from_shape_fn(p, |_| normal(&mut r));
    let j = 1;
    let others: Vec<usize> = (0..p).filter(|&k| k != j).collect();
    let s_oo: Vec<Vec<f64>> = others.iter().map(|&a| others.iter().map(|&b| cov[[a, b]]).collect()).collect();
    let s_jo: Vec<f64> = others.iter().map(|&b| cov[[j, b]]).collect();
    let beta = solve(s_oo, s_jo.clone());
    let x_other: Vec<f64> = others.iter().map(|_| normal(&mut r)).collect();
    let cond_mean = mu[j] + beta.iter().zip(others.iter().zip(&x_other)).map(|(b, (&k, x))| b * (x - mu[k])).sum::<f64>();
    let cond_var = cov[[j, j]] - beta.iter().zip(&s_jo).map(|(b, s)| b * s).sum::<f64>();
    let g = GaussianConditional::from_joint(mu.view(), cov.view(), j).unwrap();
    let model = ConditionalModel::from_gaussian(j, p, g).unwrap();
    let row = Array2::from_shape_vec((1, p - 1), x_other).unwrap();
    let cond = model.conditional_given(row.view()).unwrap();
    let draws = 100_000;
    let samples: Vec<f64> = (0..draws).map(|_| cond.sample_row(0, &mut r)).collect();
    let (m_hat, v_hat) = (mean(&samples), sd(&samples).powi(2));
    let mean_z = (m_hat - cond_mean).abs() / (cond_var / draws as f64).sqrt();
    let var_z = (v_hat - cond_var).abs() / (cond_var * (2.0 / draws as f64).sqrt());
    notes.push(format!("gaussian z(mean) {mean_z:.2} z(var) {var_z:.2}"));

    let elapsed = start.elapsed();
    Outcome {
        pass: erk_ok == 200
            && bh_ok == 500
            && ks_err <= 1e-4
            && mean_z < 4.0
            && var_z < 4.0
            && elapsed < Duration::from_secs(120),
        detail: format!("{}; {elapsed:.2?}", notes.join(", ")),
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("pvalue_kernel_exactness", pvalue_kernel),
        ("null_validity_exact_conditional", null_validity),
        ("desk_benchmark_fdr_and_power", desk_benchmark),
        ("model_quality_power_trend", model_quality),
        ("fast_engine_fidelity_and_speed", fast_fidelity_and_speed),
        ("weighted_pvalue_conservativeness", conservativeness),
        ("oracle_equivalences", oracle_equivalences),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let out = run();
        println!("{} {name}: {}", if out.pass { "PASS" } else { "FAIL" }, out.detail);
        failed += usize::from(!out.pass);
    }
    println!("{failed} criteria failed");
    if failed > 0 && std::env::var_os("HRT_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
