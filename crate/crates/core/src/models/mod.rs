//! Predictive models: built-in regressors, cross-validated fitting, and the
//! bridge to out-of-process black-box predictors.
//!
//! Every model is reached through [`fit`] and [`FittedPredictor::predict`]; the
//! randomization tests never look inside a fitted model.

mod cv;
mod external;
mod kernel;
mod lasso;
mod linear;
mod mlp;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{HrtError, Result};
use crate::rng::RngStream;

pub use cv::{cv_fit, cv_fit_with_plan, r_squared, CvFit};
pub use external::{ExternalConfig, ExternalModel};
pub use kernel::KernelModel;
pub use lasso::{ElasticNetConfig, LassoConfig, PathConfig};
pub use linear::LinearModel;
pub use mlp::{MlpConfig, MlpModel};

#[doc(hidden)]
pub mod testing {
    //! Internals exposed for gradient checks in integration tests.
    pub use super::mlp::mlp_loss_and_grad;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PredictorSpec {
    Ols {
        #[serde(default = "default_true")]
        ridge_fallback: bool,
    },
    Ridge {
        /// `None` selects the penalty by inner cross-validation.
        penalty: Option<f64>,
        #[serde(default = "default_inner_folds")]
        inner_folds: usize,
    },
    Lasso(LassoConfig),
    ElasticNet(ElasticNetConfig),
    KernelRidgePoly3 {
        #[serde(default = "default_one")]
        penalty: f64,
        /// Inner-product scale; `None` means `1 / p`.
        #[serde(default)]
        gamma: Option<f64>,
    },
    Mlp(MlpConfig),
    External(ExternalConfig),
}

fn default_true() -> bool {
    true
}
fn default_one() -> f64 {
    1.0
}
pub(crate) fn default_inner_folds() -> usize {
    5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Ols,
    Ridge,
    Lasso,
    ElasticNet,
    KernelRidgePoly3,
    Mlp,
    External,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Ols => "ols",
            Family::Ridge => "ridge",
            Family::Lasso => "lasso",
            Family::ElasticNet => "elastic_net",
            Family::KernelRidgePoly3 => "kernel_ridge_poly3",
            Family::Mlp => "mlp",
            Family::External => "external",
        }
    }
}

impl PredictorSpec {
    pub fn family(&self) -> Family {
        match self {
            PredictorSpec::Ols { .. } => Family::Ols,
            PredictorSpec::Ridge { .. } => Family::Ridge,
            PredictorSpec::Lasso(_) => Family::Lasso,
            PredictorSpec::ElasticNet(_) => Family::ElasticNet,
            PredictorSpec::KernelRidgePoly3 { .. } => Family::KernelRidgePoly3,
            PredictorSpec::Mlp(_) => Family::Mlp,
            PredictorSpec::External(_) => Family::External,
        }
    }

    /// Family defaults by name, as accepted on the command line.
    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "ols" => PredictorSpec::Ols { ridge_fallback: true },
            "ridge" => PredictorSpec::Ridge {
                penalty: Some(1.0),
                inner_folds: default_inner_folds(),
            },
            "lasso" => PredictorSpec::Lasso(LassoConfig::default()),
            "elastic_net" | "enet" => PredictorSpec::ElasticNet(ElasticNetConfig::default()),
            "kernel_ridge_poly3" | "kernel_ridge" => PredictorSpec::KernelRidgePoly3 {
                penalty: 1.0,
                gamma: None,
            },
            "mlp" => PredictorSpec::Mlp(MlpConfig::default()),
            "external" => {
                return Err(HrtError::invalid(
                    "the external family needs a command; use --external-cmd",
                ))
            }
            other => return Err(HrtError::invalid(format!("unknown model family `{other}`"))),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |v: Option<f64>, what: &str| match v {
            Some(x) if !(x >= 0.0 && x.is_finite()) => {
                Err(HrtError::invalid(format!("{what} must be a finite value >= 0")))
            }
            _ => Ok(()),
        };
        match self {
            PredictorSpec::Ols { .. } => Ok(()),
            PredictorSpec::Ridge { penalty, inner_folds } => {
                nonneg(*penalty, "ridge penalty")?;
                if penalty.is_none() && *inner_folds < 2 {
                    return Err(HrtError::invalid("inner CV needs at least 2 folds"));
                }
                Ok(())
            }
            PredictorSpec::Lasso(c) => {
                nonneg(c.penalty, "lasso penalty")?;
                c.path.validate(c.penalty.is_none())
            }
            PredictorSpec::ElasticNet(c) => c.validate(),
            PredictorSpec::KernelRidgePoly3 { penalty, gamma } => {
                nonneg(Some(*penalty), "kernel ridge penalty")?;
                nonneg(*gamma, "kernel gamma")
            }
            PredictorSpec::Mlp(c) => c.validate(),
            PredictorSpec::External(c) => c.validate(),
        }
    }
}

#[derive(Debug)]
enum FittedState {
    Linear(LinearModel),
    Kernel(KernelModel),
    Mlp(MlpModel),
    External(ExternalModel),
}

/// A trained model. `predict` is a pure function of the fitted state and its input.
#[derive(Debug)]
pub struct FittedPredictor {
    family: Family,
    n_features: usize,
    state: FittedState,
}

impl FittedPredictor {
    pub fn family(&self) -> Family {
        self.family
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        if x.ncols() != self.n_features {
            return Err(HrtError::DimensionMismatch {
                expected: self.n_features,
                got: x.ncols(),
            });
        }
        let out = match &self.state {
            FittedState::Linear(m) => m.predict(x),
            FittedState::Kernel(m) => m.predict(x),
            FittedState::Mlp(m) => m.predict(x),
            FittedState::External(m) => m.predict(x)?,
        };
        if out.iter().any(|v| !v.is_finite()) {
            return Err(HrtError::NonFinite { what: "predictions" });
        }
        Ok(out)
    }

    /// Coefficients and intercept in original feature units, for linear families.
    pub fn linear(&self) -> Option<&LinearModel> {
        match &self.state {
            FittedState::Linear(m) => Some(m),
            _ => None,
        }
    }

    /// Wraps an already-fitted linear model (e.g. known ground truth).
    pub fn from_linear(model: LinearModel) -> Self {
        FittedPredictor {
            family: Family::Ols,
            n_features: model.coef.len(),
            state: FittedState::Linear(model),
        }
    }
}

enum SwapState<'a> {
    Tiled,
    Linear { base: Vec<f64>, coef: f64 },
    Kernel(kernel::KernelSwap<'a>),
    Mlp(mlp::MlpSwap<'a>),
}

/// Predictions on a fixed design as column `j` takes different values.
///
/// Work that does not depend on column `j` is done once in [`ColumnSwap::new`].
/// External models fall back to one batched call over tiled copies of the design.
pub(crate) struct ColumnSwap<'a> {
    model: &'a FittedPredictor,
    x: Array2<f64>,
    j: usize,
    state: SwapState<'a>,
}

impl<'a> ColumnSwap<'a> {
    pub(crate) fn new(model: &'a FittedPredictor, x: Array2<f64>, j: usize) -> Result<Self> {
        if x.ncols() != model.n_features {
            return Err(HrtError::DimensionMismatch {
                expected: model.n_features,
                got: x.ncols(),
            });
        }
        if j >= x.ncols() {
            return Err(HrtError::invalid(format!("feature index {j} out of range")));
        }
        let state = match &model.state {
            FittedState::Linear(m) => {
                let coef = m.coef[j];
                let base = x
                    .outer_iter()
                    .map(|row| {
                        let dot: f64 = row.iter().zip(m.coef.iter()).enumerate().filter(|(k, _)| *k != j).map(|(_, (a, b))| a * b).sum();
                        dot + m.intercept
                    })
                    .collect();
                SwapState::Linear { base, coef }
            }
            FittedState::Kernel(m) => SwapState::Kernel(m.swap(x.view(), j)),
            FittedState::Mlp(m) => SwapState::Mlp(m.swap(x.view(), j)),
            FittedState::External(_) => SwapState::Tiled,
        };
        Ok(ColumnSwap { model, x, j, state })
    }

    /// Predictions for each column (each of length `x.nrows()`), concatenated.
    pub(crate) fn predict(&self, columns: &[&[f64]]) -> Result<Vec<f64>> {
        let n = self.x.nrows();
        if let Some(bad) = columns.iter().find(|c| c.len() != n) {
            return Err(HrtError::LengthMismatch {
                what: "replacement column",
                expected: n,
                got: bad.len(),
            });
        }
        let out = match &self.state {
            SwapState::Tiled => {
                let mut tiled = Array2::zeros((n * columns.len(), self.x.ncols()));
                for (b, col) in columns.iter().enumerate() {
                    let mut block = tiled.slice_mut(ndarray::s![b * n..(b + 1) * n, ..]);
                    block.assign(&self.x);
                    block.column_mut(self.j).assign(&ndarray::ArrayView1::from(*col));
                }
                return self.model.predict(tiled.view()).map(|p| p.to_vec());
            }
            SwapState::Linear { base, coef } => columns
                .iter()
                .flat_map(|col| base.iter().zip(col.iter()).map(|(b, v)| b + coef * v))
                .collect(),
            SwapState::Kernel(k) => {
                let mut out = vec![0.0; n * columns.len()];
                for (col, chunk) in columns.iter().zip(out.chunks_mut(n.max(1))) {
                    k.predict(col, chunk);
                }
                out
            }
            SwapState::Mlp(m) => m.predict(columns),
        };
        if out.iter().any(|v: &f64| !v.is_finite()) {
            return Err(HrtError::NonFinite { what: "predictions" });
        }
        Ok(out)
    }
}

pub fn fit(spec: &PredictorSpec, train: &Dataset, rng: &RngStream) -> Result<FittedPredictor> {
    spec.validate()?;
    fit_arrays(spec, train.features(), train.response(), rng)
}

pub(crate) fn fit_arrays(
    spec: &PredictorSpec,
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    rng: &RngStream,
) -> Result<FittedPredictor> {
    if x.nrows() != y.len() {
        return Err(HrtError::LengthMismatch {
            what: "response",
            expected: x.nrows(),
            got: y.len(),
        });
    }
    if x.nrows() < 2 {
        return Err(HrtError::invalid("need at least 2 training samples"));
    }
    let state = match spec {
        PredictorSpec::Ols { ridge_fallback } => {
            FittedState::Linear(linear::fit_ols(x, y, *ridge_fallback)?)
        }
        PredictorSpec::Ridge {
            penalty,
            inner_folds,
        } => FittedState::Linear(linear::fit_ridge(x, y, *penalty, *inner_folds, rng)?),
        PredictorSpec::Lasso(c) => FittedState::Linear(lasso::fit_lasso(x, y, c, rng)?),
        PredictorSpec::ElasticNet(c) => FittedState::Linear(lasso::fit_elastic_net(x, y, c, rng)?),
        PredictorSpec::KernelRidgePoly3 { penalty, gamma } => {
            FittedState::Kernel(KernelModel::fit(x, y, *penalty, *gamma)?)
        }
        PredictorSpec::Mlp(c) => FittedState::Mlp(MlpModel::fit(x, y, c, rng)?),
        PredictorSpec::External(c) => FittedState::External(ExternalModel::fit(c, x, y, rng)?),
    };
    Ok(FittedPredictor {
        family: spec.family(),
        n_features: x.ncols(),
        state,
    })
}
