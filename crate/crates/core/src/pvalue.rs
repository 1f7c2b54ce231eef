use crate::error::{HrtError, Result};

/// One-sided randomization p-value `(1 + #{k : t >= t̃_k}) / (K + 1)`.
///
/// Ties count toward the numerator, so a null statistic equal to the
/// observed one makes the p-value larger.
pub fn pvalue_unweighted(t: f64, nulls: &[f64]) -> Result<f64> {
    if nulls.is_empty() {
        return Err(HrtError::invalid("p-value needs at least one null statistic"));
    }
    if !t.is_finite() || nulls.iter().any(|v| !v.is_finite()) {
        return Err(HrtError::NonFinite {
            what: "test statistics",
        });
    }
    let hits = nulls.iter().filter(|&&nt| t >= nt).count();
    Ok((1 + hits) as f64 / (nulls.len() + 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn below_every_null() {
        let nulls: Vec<f64> = (1..=100).map(|k| k as f64).collect();
        assert_eq!(pvalue_unweighted(0.5, &nulls).unwrap(), 1.0 / 101.0);
    }

    #[test]
    fn above_every_null() {
        assert_eq!(pvalue_unweighted(10.0, &[1.0, 2.0, 10.0]).unwrap(), 1.0);
    }

    #[test]
    fn four_of_nine() {
        let nulls = [1.0, 2.0, 3.0, 4.0, 6.0, 7.0, 8.0, 9.0, 10.0];
        assert_eq!(pvalue_unweighted(5.0, &nulls).unwrap(), 0.5);
    }

    #[test]
    fn empty_rejected() {
        assert!(pvalue_unweighted(1.0, &[]).is_err());
    }

    proptest! {
        #[test]
        fn bounds_and_monotone(
            nulls in prop::collection::vec(-10f64..10.0, 1..60),
            t in -12f64..12.0,
            dt in 0f64..5.0,
        ) {
            let k = nulls.len() as f64;
            let p = pvalue_unweighted(t, &nulls).unwrap();
            prop_assert!(p >= 1.0 / (k + 1.0) && p <= 1.0);
            let p_lower = pvalue_unweighted(t - dt, &nulls).unwrap();
            prop_assert!(p_lower <= p);
        }
    }
}
