//! Dense kernels shared by the solver, the basis builders and inference.
//!
//! Matrices are nalgebra `DMatrix` (column-major), so a column is a contiguous
//! slice and the hot loops below operate on plain `&[f64]`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SsglError};

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let k = 4 * i;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in 4 * chunks..a.len() {
        s += a[k] * b[k];
    }
    s
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn column(x: &DMatrix<f64>, j: usize) -> &[f64] {
    let n = x.nrows();
    &x.as_slice()[j * n..(j + 1) * n]
}

/// Least-squares coefficients of `b` on the columns of `a` (minimum-norm via SVD).
pub fn lstsq(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() != b.nrows() {
        return Err(SsglError::DimensionMismatch(format!(
            "lstsq: {} rows vs {} rows",
            a.nrows(),
            b.nrows()
        )));
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * 1e-12 * (a.nrows().max(a.ncols()) as f64);
    svd.solve(b, tol)
        .map_err(|e| SsglError::NonFinite(format!("least squares solve failed: {e}")))
}

/// Residuals of each column of `b` after projecting onto the span of `a`,
/// together with the projection coefficients.
pub fn residualize(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let gamma = lstsq(a, b)?;
    let resid = b - a * &gamma;
    Ok((resid, gamma))
}

/// Sample variance with the `n - 1` denominator.
pub fn sample_variance(y: &[f64]) -> f64 {
    let n = y.len();
    if n < 2 {
        return 0.0;
    }
    let mean = y.iter().sum::<f64>() / n as f64;
    y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
}

pub fn mean(y: &[f64]) -> f64 {
    if y.is_empty() {
        0.0
    } else {
        y.iter().sum::<f64>() / y.len() as f64
    }
}

/// Select rows of a matrix, preserving order.
pub fn select_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), x.ncols(), |i, j| x[(rows[i], j)])
}

pub fn select_entries(y: &DVector<f64>, rows: &[usize]) -> DVector<f64> {
    DVector::from_iterator(rows.len(), rows.iter().map(|&i| y[i]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive_for_odd_lengths() {
        for len in 0..11 {
            let a: Vec<f64> = (0..len).map(|i| i as f64 * 0.5 - 1.0).collect();
            let b: Vec<f64> = (0..len).map(|i| (i as f64).sin()).collect();
            let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            assert!((dot(&a, &b) - naive).abs() < 1e-12);
        }
    }

    #[test]
    fn residuals_are_orthogonal_to_regressors() {
        let a = DMatrix::from_fn(20, 3, |i, j| ((i * (j + 2)) as f64).cos());
        let b = DMatrix::from_fn(20, 2, |i, j| (i as f64 * 0.3 + j as f64).sin());
        let (r, _) = residualize(&a, &b).unwrap();
        let cross = a.transpose() * &r;
        assert!(cross.amax() < 1e-10);
        let (r2, _) = residualize(&a, &r).unwrap();
        assert!((&r2 - &r).amax() < 1e-10);
    }
}
