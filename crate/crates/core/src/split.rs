use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{HrtError, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitPlan {
    Holdout { train: Vec<usize>, test: Vec<usize> },
    Folds(Vec<Vec<usize>>),
}

impl SplitPlan {
    /// Checks disjointness, coverage of `0..n`, and nonempty parts.
    pub fn validate(&self, n: usize) -> Result<()> {
        let parts: Vec<&Vec<usize>> = match self {
            SplitPlan::Holdout { train, test } => vec![train, test],
            SplitPlan::Folds(f) => {
                if f.len() < 2 {
                    return Err(HrtError::invalid("fold plan needs at least 2 folds"));
                }
                f.iter().collect()
            }
        };
        let mut seen = vec![false; n];
        for part in &parts {
            if part.is_empty() {
                return Err(HrtError::invalid("split plan has an empty part"));
            }
            for &i in part.iter() {
                if i >= n || seen[i] {
                    return Err(HrtError::invalid(format!(
                        "index {i} out of range or repeated in split plan"
                    )));
                }
                seen[i] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(HrtError::invalid("split plan does not cover every sample"));
        }
        Ok(())
    }

    pub fn folds(&self) -> Option<&[Vec<usize>]> {
        match self {
            SplitPlan::Folds(f) => Some(f),
            SplitPlan::Holdout { .. } => None,
        }
    }
}

/// Balanced random partition of `0..n` into `m` folds (sizes differ by at most 1).
/// Indices within each fold are sorted.
pub fn make_folds(n: usize, m: usize, rng: &RngStream) -> Result<SplitPlan> {
    if m < 2 || m > n {
        return Err(HrtError::invalid(format!(
            "fold count {m} must satisfy 2 <= M <= n = {n}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng.rng());
    let mut folds = vec![Vec::with_capacity(n / m + 1); m];
    for (pos, i) in idx.into_iter().enumerate() {
        folds[pos % m].push(i);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(SplitPlan::Folds(folds))
}

/// Random train/test split with `round(test_fraction * n)` test rows (at least one each side).
pub fn make_holdout(n: usize, test_fraction: f64, rng: &RngStream) -> Result<SplitPlan> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(HrtError::invalid("test fraction must lie in (0, 1)"));
    }
    if n < 2 {
        return Err(HrtError::invalid("holdout split needs at least 2 samples"));
    }
    let n_test = ((test_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng.rng());
    let mut test = idx[..n_test].to_vec();
    let mut train = idx[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok(SplitPlan::Holdout { train, test })
}

/// Complement of `part` within `0..n`, sorted.
pub(crate) fn complement(n: usize, part: &[usize]) -> Vec<usize> {
    let mut mask = vec![true; n];
    for &i in part {
        mask[i] = false;
    }
    (0..n).filter(|&i| mask[i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ten_into_five() {
        let plan = make_folds(10, 5, &RngStream::new(1)).unwrap();
        plan.validate(10).unwrap();
        assert!(plan.folds().unwrap().iter().all(|f| f.len() == 2));
    }

    #[test]
    fn seven_into_three() {
        let plan = make_folds(7, 3, &RngStream::new(2)).unwrap();
        let mut sizes: Vec<usize> = plan.folds().unwrap().iter().map(Vec::len).collect();
        sizes.sort();
        assert_eq!(sizes, vec![2, 2, 3]);
    }

    #[test]
    fn deterministic() {
        let a = make_folds(50, 4, &RngStream::new(77)).unwrap();
        let b = make_folds(50, 4, &RngStream::new(77)).unwrap();
        assert_eq!(a, b);
        let c = make_folds(50, 4, &RngStream::new(78)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn out_of_range() {
        assert!(make_folds(5, 1, &RngStream::new(0)).is_err());
        assert!(make_folds(5, 6, &RngStream::new(0)).is_err());
    }

    #[test]
    fn holdout_split() {
        let plan = make_holdout(100, 0.2, &RngStream::new(5)).unwrap();
        plan.validate(100).unwrap();
        if let SplitPlan::Holdout { train, test } = plan {
            assert_eq!(test.len(), 20);
            assert_eq!(train.len(), 80);
        }
    }

    proptest! {
        #[test]
        fn partition_properties(n in 2usize..=200, m_raw in 2usize..=200, seed in any::<u64>()) {
            let m = 2 + (m_raw - 2) % (n - 1);
            let plan = make_folds(n, m, &RngStream::new(seed)).unwrap();
            plan.validate(n).unwrap();
            let sizes: Vec<usize> = plan.folds().unwrap().iter().map(Vec::len).collect();
            let lo = *sizes.iter().min().unwrap();
            let hi = *sizes.iter().max().unwrap();
            prop_assert!(hi - lo <= 1);
            prop_assert_eq!(sizes.len(), m);
        }
    }
}
