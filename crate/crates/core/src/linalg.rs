//! Thin wrappers around nalgebra factorizations for ndarray-held data.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{HrtError, Result};

pub(crate) fn to_dmatrix(a: ArrayView2<'_, f64>) -> DMatrix<f64> {
    let (r, c) = a.dim();
    DMatrix::from_fn(r, c, |i, j| a[[i, j]])
}

pub(crate) fn to_dvector(v: ArrayView1<'_, f64>) -> DVector<f64> {
    DVector::from_iterator(v.len(), v.iter().copied())
}

/// Solves `A x = b` for symmetric positive definite `A`.
pub(crate) fn spd_solve(a: ArrayView2<'_, f64>, b: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    let chol = nalgebra::Cholesky::new(to_dmatrix(a))
        .ok_or_else(|| HrtError::Singular("matrix is not positive definite".into()))?;
    let x = chol.solve(&to_dvector(b));
    Ok(Array1::from_iter(x.iter().copied()))
}

/// Inverse of a symmetric positive definite matrix.
pub(crate) fn spd_inverse(a: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let chol = nalgebra::Cholesky::new(to_dmatrix(a))
        .ok_or_else(|| HrtError::Singular("matrix is not positive definite".into()))?;
    let inv = chol.inverse();
    let n = inv.nrows();
    Ok(Array2::from_shape_fn((n, n), |(i, j)| inv[(i, j)]))
}

/// Column means and population standard deviations. Constant columns get
/// scale 1 so downstream divisions stay finite.
pub(crate) fn column_stats(x: ArrayView2<'_, f64>) -> (Array1<f64>, Array1<f64>) {
    let n = x.nrows() as f64;
    let means = x.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(x.ncols()));
    let mut scales = Array1::zeros(x.ncols());
    for (j, col) in x.axis_iter(Axis(1)).enumerate() {
        let m = means[j];
        let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
        scales[j] = if var > 1e-24 { var.sqrt() } else { 1.0 };
    }
    (means, scales)
}

pub(crate) fn standardize(
    x: ArrayView2<'_, f64>,
    means: &Array1<f64>,
    scales: &Array1<f64>,
) -> Array2<f64> {
    let mut out = x.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        row -= means;
        row /= scales;
    }
    out
}

pub(crate) fn mean_and_sd(v: ArrayView1<'_, f64>) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.sum() / n;
    let var = v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / n;
    (m, if var > 1e-24 { var.sqrt() } else { 1.0 })
}
