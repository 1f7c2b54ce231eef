//! Tabular data model and CSV ingestion.
//!
//! Features are stored row-major, samples as rows, in their original units.
//! Any standardization happens inside model fitting.

use std::collections::{BTreeMap, HashSet};
use std::io::Read;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{HrtError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Continuous,
    /// Sorted, deduplicated support.
    Discrete(Vec<f64>),
}

impl FeatureKind {
    pub fn discrete(mut support: Vec<f64>) -> Result<Self> {
        if support.is_empty() {
            return Err(HrtError::invalid("discrete support must be nonempty"));
        }
        if support.iter().any(|v| !v.is_finite()) {
            return Err(HrtError::NonFinite {
                what: "discrete support",
            });
        }
        support.sort_by(f64::total_cmp);
        support.dedup();
        Ok(FeatureKind::Discrete(support))
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, FeatureKind::Discrete(_))
    }

    pub fn support(&self) -> Option<&[f64]> {
        match self {
            FeatureKind::Discrete(s) => Some(s),
            FeatureKind::Continuous => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    features: Array2<f64>,
    response: Array1<f64>,
    names: Vec<String>,
    kinds: Vec<FeatureKind>,
}

impl Dataset {
    pub fn new(
        features: Array2<f64>,
        response: Array1<f64>,
        names: Vec<String>,
        kinds: Vec<FeatureKind>,
    ) -> Result<Self> {
        let (n, p) = features.dim();
        if response.len() != n {
            return Err(HrtError::LengthMismatch {
                what: "response",
                expected: n,
                got: response.len(),
            });
        }
        if names.len() != p {
            return Err(HrtError::LengthMismatch {
                what: "feature names",
                expected: p,
                got: names.len(),
            });
        }
        if kinds.len() != p {
            return Err(HrtError::LengthMismatch {
                what: "feature kinds",
                expected: p,
                got: kinds.len(),
            });
        }
        let mut seen = HashSet::new();
        for name in &names {
            if !seen.insert(name.as_str()) {
                return Err(HrtError::invalid(format!("duplicate feature name `{name}`")));
            }
        }
        if let Some((i, _)) = features
            .axis_iter(Axis(0))
            .enumerate()
            .find(|(_, row)| row.iter().any(|v| !v.is_finite()))
        {
            return Err(HrtError::Data {
                row: i,
                message: "non-finite feature value".into(),
            });
        }
        if let Some(i) = response.iter().position(|v| !v.is_finite()) {
            return Err(HrtError::Data {
                row: i,
                message: "non-finite response".into(),
            });
        }
        for (j, kind) in kinds.iter().enumerate() {
            if let FeatureKind::Discrete(support) = kind {
                for (i, &v) in features.column(j).iter().enumerate() {
                    if support_index(support, v).is_none() {
                        return Err(HrtError::Data {
                            row: i,
                            message: format!(
                                "value {v} of discrete column `{}` is outside its declared support",
                                names[j]
                            ),
                        });
                    }
                }
            }
        }
        Ok(Dataset {
            features,
            response,
            names,
            kinds,
        })
    }

    /// All-continuous dataset with generated names `x0, x1, ...`.
    pub fn from_arrays(features: Array2<f64>, response: Array1<f64>) -> Result<Self> {
        let p = features.ncols();
        let names = (0..p).map(|j| format!("x{j}")).collect();
        Self::new(features, response, names, vec![FeatureKind::Continuous; p])
    }

    pub fn n_samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn response(&self) -> ArrayView1<'_, f64> {
        self.response.view()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn kinds(&self) -> &[FeatureKind] {
        &self.kinds
    }

    pub fn kind(&self, j: usize) -> &FeatureKind {
        &self.kinds[j]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Rows in the given order; duplicates allowed (bootstrap resamples).
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), rows),
            response: self.response.select(Axis(0), rows),
            names: self.names.clone(),
            kinds: self.kinds.clone(),
        }
    }

    /// Same rows with a different response vector.
    pub fn with_response(&self, response: Array1<f64>) -> Result<Dataset> {
        Dataset::new(
            self.features.clone(),
            response,
            self.names.clone(),
            self.kinds.clone(),
        )
    }

    /// CSV with a header row. `response` names the target column; every other
    /// column is a feature. `discrete` maps column names to their supports.
    pub fn from_csv_reader<R: Read>(
        reader: R,
        response: &str,
        discrete: &BTreeMap<String, Vec<f64>>,
    ) -> Result<Dataset> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        let resp_col = headers
            .iter()
            .position(|h| h == response)
            .ok_or_else(|| HrtError::invalid(format!("response column `{response}` not in header")))?;
        for name in discrete.keys() {
            if !headers.iter().any(|h| h == name) || name == response {
                return Err(HrtError::invalid(format!(
                    "discrete declaration for unknown feature column `{name}`"
                )));
            }
        }

        let p = headers.len() - 1;
        let mut values = Vec::new();
        let mut ys = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            // Data rows are numbered from 1; the header is row 0.
            let row = i + 1;
            let record = record.map_err(|e| HrtError::Data {
                row,
                message: e.to_string(),
            })?;
            if record.len() != headers.len() {
                return Err(HrtError::Data {
                    row,
                    message: format!("expected {} fields, found {}", headers.len(), record.len()),
                });
            }
            for (c, field) in record.iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| HrtError::Data {
                    row,
                    message: format!("column `{}`: cannot parse `{field}` as a number", headers[c]),
                })?;
                if !v.is_finite() {
                    return Err(HrtError::Data {
                        row,
                        message: format!("column `{}`: non-finite value", headers[c]),
                    });
                }
                if c == resp_col {
                    ys.push(v);
                } else {
                    values.push(v);
                }
            }
        }
        if ys.is_empty() {
            return Err(HrtError::invalid("CSV has no data rows"));
        }
        let n = ys.len();
        let features = Array2::from_shape_vec((n, p), values)
            .map_err(|e| HrtError::invalid(e.to_string()))?;
        let names: Vec<String> = headers
            .into_iter()
            .enumerate()
            .filter(|&(c, _)| c != resp_col)
            .map(|(_, h)| h)
            .collect();
        let kinds = names
            .iter()
            .map(|name| match discrete.get(name) {
                Some(s) => FeatureKind::discrete(s.clone()),
                None => Ok(FeatureKind::Continuous),
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(features, Array1::from(ys), names, kinds)
    }

    pub fn from_csv_path(
        path: impl AsRef<Path>,
        response: &str,
        discrete: &BTreeMap<String, Vec<f64>>,
    ) -> Result<Dataset> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file, response, discrete)
    }
}

/// Parses discrete-column declarations: one `name = v1, v2, ...` per line,
/// `#` starts a comment.
pub fn parse_discrete_sidecar(text: &str) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut out = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (name, vals) = line.split_once('=').ok_or_else(|| HrtError::Data {
            row: lineno + 1,
            message: "expected `column = v1, v2, ...`".into(),
        })?;
        let support = vals
            .split(',')
            .map(|v| {
                v.trim().parse::<f64>().map_err(|_| HrtError::Data {
                    row: lineno + 1,
                    message: format!("bad support value `{}`", v.trim()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.insert(name.trim().to_string(), support);
    }
    Ok(out)
}

/// Index of `v` in a sorted support, tolerating representation noise.
pub(crate) fn support_index(support: &[f64], v: f64) -> Option<usize> {
    let tol = 1e-9 * (1.0 + v.abs());
    let pos = support.partition_point(|&s| s < v - tol);
    (pos < support.len() && (support[pos] - v).abs() <= tol).then_some(pos)
}

/// `X` without column `j`.
pub fn drop_column(x: ArrayView2<'_, f64>, j: usize) -> Array2<f64> {
    let keep: Vec<usize> = (0..x.ncols()).filter(|&c| c != j).collect();
    x.select(Axis(1), &keep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn rejects_non_finite_and_mismatch() {
        let x = array![[1.0, f64::NAN], [0.0, 1.0]];
        assert!(matches!(
            Dataset::from_arrays(x, array![1.0, 2.0]),
            Err(HrtError::Data { row: 0, .. })
        ));
        let x = array![[1.0, 2.0], [0.0, 1.0]];
        assert!(matches!(
            Dataset::from_arrays(x, array![1.0]),
            Err(HrtError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn rejects_duplicate_names() {
        let x = array![[1.0, 2.0]];
        let r = Dataset::new(
            x,
            array![0.0],
            vec!["a".into(), "a".into()],
            vec![FeatureKind::Continuous; 2],
        );
        assert!(r.is_err());
    }

    #[test]
    fn csv_roundtrip_and_discrete() {
        let text = "a,y,b\n1.0,2.0,0\n3.5,4.0,1\n";
        let mut disc = BTreeMap::new();
        disc.insert("b".to_string(), vec![1.0, 0.0]);
        let d = Dataset::from_csv_reader(text.as_bytes(), "y", &disc).unwrap();
        assert_eq!(d.names(), &["a".to_string(), "b".to_string()]);
        assert_eq!(d.response().to_vec(), vec![2.0, 4.0]);
        assert_eq!(d.features()[[1, 0]], 3.5);
        assert_eq!(d.kind(1), &FeatureKind::Discrete(vec![0.0, 1.0]));
    }

    #[test]
    fn malformed_row_is_named() {
        let text = "a,y\n1,2\n3,oops\n";
        let err = Dataset::from_csv_reader(text.as_bytes(), "y", &BTreeMap::new()).unwrap_err();
        match err {
            HrtError::Data { row, message } => {
                assert_eq!(row, 2);
                assert!(message.contains("oops"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn discrete_value_outside_support() {
        let text = "a,y\n2,1\n";
        let mut disc = BTreeMap::new();
        disc.insert("a".to_string(), vec![0.0, 1.0]);
        assert!(Dataset::from_csv_reader(text.as_bytes(), "y", &disc).is_err());
    }

    #[test]
    fn sidecar_parsing() {
        let m = parse_discrete_sidecar("# comment\nsnp1 = 0, 1, 2\n\nflag=0,1\n").unwrap();
        assert_eq!(m["snp1"], vec![0.0, 1.0, 2.0]);
        assert_eq!(m["flag"], vec![0.0, 1.0]);
        assert!(parse_discrete_sidecar("nonsense").is_err());
    }

    #[test]
    fn drop_column_keeps_order() {
        let x = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
        assert_eq!(drop_column(x.view(), 1), array![[1.0, 3.0], [4.0, 6.0]]);
    }
}
