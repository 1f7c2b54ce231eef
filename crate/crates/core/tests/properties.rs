//! Property tests for the selection rules, p-values and benchmark metrics.

use hrt_core::bench::evaluate;
use hrt_core::hrt::{conservative_weight, weighted_pvalue};
use hrt_core::select::{bh, erk_select, erk_threshold};
use proptest::prelude::*;

fn pvalues() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((1u32..=1000).prop_map(|k| k as f64 / 1000.0), 1..60)
}

proptest! {
    #[test]
    fn bh_is_monotone_in_alpha(p in pvalues(), a in 0.01f64..0.5, b in 0.01f64..0.5) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let small = bh(&p, lo).unwrap().discoveries;
        let large = bh(&p, hi).unwrap().discoveries;
        prop_assert!(small.iter().all(|i| large.contains(i)));
    }

    #[test]
    fn bh_never_rejects_above_alpha(p in pvalues(), alpha in 0.01f64..0.5) {
        for i in bh(&p, alpha).unwrap().discoveries {
            prop_assert!(p[i] <= alpha);
        }
    }

    #[test]
    fn bh_rejects_below_bonferroni(p in pvalues(), alpha in 0.01f64..0.5) {
        let sel = bh(&p, alpha).unwrap().discoveries;
        let m = p.len() as f64;
        for (i, &v) in p.iter().enumerate() {
            if v <= alpha / m {
                prop_assert!(sel.contains(&i));
            }
        }
    }

    #[test]
    fn erk_threshold_is_the_smallest_feasible_candidate(
        w in prop::collection::vec(-5.0f64..10.0, 1..50),
        alpha in 0.05f64..0.6,
    ) {
        let feasible = |omega: f64| {
            let neg = w.iter().filter(|&&v| v <= -omega).count() as f64;
            let pos = w.iter().filter(|&&v| v >= omega).count() as f64;
            pos > 0.0 && (1.0 + neg) / pos <= alpha
        };
        let omega = erk_threshold(&w, alpha).unwrap();
        let candidates: Vec<f64> = std::iter::once(0.0).chain(w.iter().map(|v| v.abs())).collect();
        if omega.is_finite() {
            prop_assert!(feasible(omega));
            prop_assert!(candidates.contains(&omega));
        }
        for &c in &candidates {
            if c < omega {
                prop_assert!(!feasible(c));
            }
        }
        let sel = erk_select(&w, alpha).unwrap();
        prop_assert_eq!(sel.discoveries.len(), w.iter().filter(|&&v| v >= omega).count());
    }

    #[test]
    fn weighted_pvalue_lies_in_unit_interval_and_grows_with_t(
        nulls in prop::collection::vec(-3.0f64..3.0, 1..100),
        seed_weights in prop::collection::vec(0.0f64..4.0, 100),
        t in -4.0f64..4.0,
        dt in 0.0f64..2.0,
    ) {
        let w = &seed_weights[..nulls.len()];
        let p = weighted_pvalue(t, &nulls, w).unwrap();
        prop_assert!(p > 0.0 && p <= 1.0);
        prop_assert!(weighted_pvalue(t + dt, &nulls, w).unwrap() >= p);
    }

    #[test]
    fn conservative_weight_favours_the_upper_band(
        q in prop::collection::vec(0.05f64..2.0, 1..30),
        lo_frac in 0.1f64..1.0,
        hi_frac in 1.0f64..3.0,
    ) {
        let lower: Vec<f64> = q.iter().map(|v| v * lo_frac).collect();
        let upper: Vec<f64> = q.iter().map(|v| v * hi_frac).collect();
        let hit = conservative_weight(&lower, &upper, &q, true).unwrap();
        let miss = conservative_weight(&lower, &upper, &q, false).unwrap();
        prop_assert!(hit >= miss);
        prop_assert!((hit - hi_frac).abs() < 1e-9 && (miss - lo_frac).abs() < 1e-9);
    }

    #[test]
    fn evaluate_identities(truth in prop::collection::vec(any::<bool>(), 1..40), picks in prop::collection::vec(any::<prop::sample::Index>(), 0..40)) {
        let p = truth.len();
        let disc: Vec<usize> = picks.iter().map(|i| i.index(p)).collect();
        let (power, fdr) = evaluate(&disc, &truth).unwrap();
        prop_assert!((0.0..=1.0).contains(&power) && (0.0..=1.0).contains(&fdr));
        let all_true: Vec<usize> = (0..p).filter(|&j| truth[j]).collect();
        let (power, fdr) = evaluate(&all_true, &truth).unwrap();
        prop_assert_eq!(fdr, 0.0);
        if !all_true.is_empty() {
            prop_assert_eq!(power, 1.0);
        }
        prop_assert_eq!(evaluate(&[], &truth).unwrap(), (0.0, 0.0));
    }
}
