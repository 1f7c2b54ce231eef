use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{HrtError, Result};
use crate::linalg::{column_stats, spd_solve, standardize};

/// Kernel ridge with the cubic polynomial kernel `(1 + γ xᵀx′)³` on
/// standardized inputs and a centered response.
#[derive(Debug, Clone)]
pub struct KernelModel {
    x_means: Array1<f64>,
    x_scales: Array1<f64>,
    support: Array2<f64>,
    dual: Array1<f64>,
    y_mean: f64,
    gamma: f64,
}

pub(crate) fn poly3_kernel(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, gamma: f64) -> Array2<f64> {
    let mut k = a.dot(&b.t());
    k.mapv_inplace(|v| {
        let base = 1.0 + gamma * v;
        base * base * base
    });
    k
}

impl KernelModel {
    pub(crate) fn fit(
        x: ArrayView2<'_, f64>,
        y: ArrayView1<'_, f64>,
        penalty: f64,
        gamma: Option<f64>,
    ) -> Result<Self> {
        let gamma = gamma.unwrap_or(1.0 / x.ncols().max(1) as f64);
        let (x_means, x_scales) = column_stats(x);
        let support = standardize(x, &x_means, &x_scales);
        let y_mean = y.sum() / y.len() as f64;
        let yc = y.mapv(|v| v - y_mean);
        let mut gram = poly3_kernel(support.view(), support.view(), gamma);
        for i in 0..gram.nrows() {
            gram[[i, i]] += penalty;
        }
        let dual = spd_solve(gram.view(), yc.view())
            .map_err(|_| HrtError::Singular("kernel ridge system not positive definite; raise the penalty".into()))?;
        Ok(KernelModel {
            x_means,
            x_scales,
            support,
            dual,
            y_mean,
            gamma,
        })
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        let xs = standardize(x, &self.x_means, &self.x_scales);
        let k = poly3_kernel(xs.view(), self.support.view(), self.gamma);
        let mut out = k.dot(&self.dual);
        out += self.y_mean;
        out
    }

    /// Precomputes inner products of `x` with the support, excluding column `j`.
    pub(crate) fn swap(&self, x: ArrayView2<'_, f64>, j: usize) -> KernelSwap<'_> {
        let mut xs = standardize(x, &self.x_means, &self.x_scales);
        xs.column_mut(j).fill(0.0);
        KernelSwap {
            model: self,
            base: xs.dot(&self.support.t()),
            j,
        }
    }
}

/// Kernel predictions on a fixed design with one column replaced.
pub(crate) struct KernelSwap<'a> {
    model: &'a KernelModel,
    base: Array2<f64>,
    j: usize,
}

impl KernelSwap<'_> {
    pub(crate) fn predict(&self, col: &[f64], out: &mut [f64]) {
        let m = self.model;
        let (mean, scale) = (m.x_means[self.j], m.x_scales[self.j]);
        let sup = m.support.column(self.j);
        for (i, o) in out.iter_mut().enumerate() {
            let v = (col[i] - mean) / scale;
            let mut acc = 0.0;
            for ((b, s), d) in self.base.row(i).iter().zip(sup.iter()).zip(m.dual.iter()) {
                let k = 1.0 + m.gamma * (b + v * s);
                acc += k * k * k * d;
            }
            *o = acc + m.y_mean;
        }
    }
}
