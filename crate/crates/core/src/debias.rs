//! De-biased coordinates and pointwise intervals from a nodewise-lasso
//! approximate inverse of `X^T X / n`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::design::GroupedDesign;
use crate::error::{Result, SsglError};
use crate::linalg::dot;

pub const KKT_TOL: f64 = 1e-7;
const TAU2_FLOOR: f64 = 1e-12;
const MAX_SWEEPS: usize = 100_000;

/// `sqrt(log p / n)` scaled by `c`.
pub fn default_lambda(n: usize, p: usize, c: f64) -> f64 {
    c * ((p.max(2) as f64).ln() / n as f64).sqrt()
}

/// Lasso of column `j` on the remaining columns, in covariance form.
///
/// Minimizes `||X_j - X_{-j} gamma||^2 / n + 2 lambda ||gamma||_1` given
/// `gram = X^T X / n`. Returns a length-`p` vector with a zero at `j`.
/// `lambda = 0` is solved exactly as least squares.
pub fn lasso_cd(gram: &DMatrix<f64>, j: usize, lambda: f64) -> Result<DVector<f64>> {
    let p = gram.nrows();
    if gram.ncols() != p || j >= p {
        return Err(SsglError::DimensionMismatch(format!("gram is {}x{}, node {j}", p, gram.ncols())));
    }
    if !(lambda >= 0.0) {
        return Err(SsglError::InvalidConfig("nodewise lambda must be nonnegative".into()));
    }
    let others: Vec<usize> = (0..p).filter(|&k| k != j).collect();
    let mut gamma = DVector::zeros(p);
    if others.is_empty() {
        return Ok(gamma);
    }
    if lambda == 0.0 {
        let q = others.len();
        let a = DMatrix::from_fn(q, q, |r, c| gram[(others[r], others[c])]);
        let b = DVector::from_fn(q, |r, _| gram[(others[r], j)]);
        let sol = match a.clone().cholesky() {
            Some(ch) => ch.solve(&b),
            None => {
                let svd = a.svd(true, true);
                let tol = svd.singular_values.max() * 1e-12 * q as f64;
                svd.solve(&b, tol).map_err(|e| SsglError::NonFinite(e.to_string()))?
            }
        };
        for (r, &k) in others.iter().enumerate() {
            gamma[k] = sol[r];
        }
        return Ok(gamma);
    }

    // c_k = gram[k, j] - sum_l gram[k, l] gamma_l
    let mut c: Vec<f64> = (0..p).map(|k| gram[(k, j)]).collect();
    for sweep in 0..MAX_SWEEPS {
        for &k in &others {
            let dkk = gram[(k, k)];
            if dkk <= 0.0 {
                continue;
            }
            let u = c[k] + dkk * gamma[k];
            let new = soft(u, lambda) / dkk;
            let delta = new - gamma[k];
            if delta != 0.0 {
                gamma[k] = new;
                let col = &gram.as_slice()[k * p..(k + 1) * p];
                for (ci, gk) in c.iter_mut().zip(col) {
                    *ci -= delta * gk;
                }
            }
        }
        if kkt_violation(&c, &gamma, lambda, j) <= KKT_TOL {
            log::trace!("node {j} converged after {} sweeps", sweep + 1);
            return Ok(gamma);
        }
    }
    Err(SsglError::MaxIterExceeded(MAX_SWEEPS))
}

fn soft(u: f64, lambda: f64) -> f64 {
    if u > lambda {
        u - lambda
    } else if u < -lambda {
        u + lambda
    } else {
        0.0
    }
}

fn kkt_violation(c: &[f64], gamma: &DVector<f64>, lambda: f64, j: usize) -> f64 {
    c.iter()
        .enumerate()
        .filter(|&(k, _)| k != j)
        .map(|(k, &ck)| {
            if gamma[k] == 0.0 {
                (ck.abs() - lambda).max(0.0)
            } else {
                (ck - lambda * gamma[k].signum()).abs()
            }
        })
        .fold(0.0, f64::max)
}

/// Largest KKT residual of a nodewise solution, recomputed from scratch.
pub fn nodewise_kkt(gram: &DMatrix<f64>, j: usize, gamma: &DVector<f64>, lambda: f64) -> f64 {
    let g = gram * gamma;
    let c: Vec<f64> = (0..gram.nrows()).map(|k| gram[(k, j)] - g[k]).collect();
    kkt_violation(&c, gamma, lambda, j)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodewiseResult {
    pub theta: DMatrix<f64>,
    pub tau2: DVector<f64>,
    pub lambdas: Vec<f64>,
}

/// Approximate inverse `Theta = T^{-2} C` from one lasso per column.
pub fn build_theta(x: &DMatrix<f64>, lambdas: &[f64]) -> Result<NodewiseResult> {
    let (n, p) = x.shape();
    if lambdas.len() != p {
        return Err(SsglError::DimensionMismatch(format!("{} lambdas for {p} columns", lambdas.len())));
    }
    let gram = gram_matrix(x);
    let rows: Vec<(DVector<f64>, f64)> = (0..p)
        .into_par_iter()
        .map(|j| {
            let gamma = lasso_cd(&gram, j, lambdas[j])?;
            let fitted = x * &gamma;
            let xj = &x.as_slice()[j * n..(j + 1) * n];
            let rss: f64 = xj.iter().zip(fitted.iter()).map(|(a, b)| (a - b).powi(2)).sum();
            let tau2 = rss / n as f64 + lambdas[j] * gamma.iter().map(|v| v.abs()).sum::<f64>();
            if !(tau2 > TAU2_FLOOR) {
                return Err(SsglError::DegenerateColumn { column: j, tau2 });
            }
            Ok((gamma, tau2))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut theta = DMatrix::zeros(p, p);
    let mut tau2 = DVector::zeros(p);
    for (j, (gamma, t2)) in rows.into_iter().enumerate() {
        for k in 0..p {
            let c = if k == j { 1.0 } else { -gamma[k] };
            theta[(j, k)] = c / t2;
        }
        tau2[j] = t2;
    }
    Ok(NodewiseResult {
        theta,
        tau2,
        lambdas: lambdas.to_vec(),
    })
}

/// `X^T X / n`
pub fn gram_matrix(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mut g = x.tr_mul(x);
    g /= n as f64;
    g
}

/// `beta_hat + Theta X^T (Y - X beta_hat) / n`
pub fn debias(beta_hat: &DVector<f64>, x: &DMatrix<f64>, y: &DVector<f64>, theta: &DMatrix<f64>) -> Result<DVector<f64>> {
    let (n, p) = x.shape();
    if beta_hat.len() != p || y.len() != n || theta.shape() != (p, p) {
        return Err(SsglError::DimensionMismatch(format!(
            "debias: X is {n}x{p}, beta {} , y {}, Theta {:?}",
            beta_hat.len(),
            y.len(),
            theta.shape()
        )));
    }
    let resid = y - x * beta_hat;
    let score: DVector<f64> = DVector::from_fn(p, |j, _| dot(&x.as_slice()[j * n..(j + 1) * n], resid.as_slice()) / n as f64);
    Ok(beta_hat + theta * score)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebiasOutput {
    pub beta_hat: DVector<f64>,
    pub beta_d: DVector<f64>,
    pub se: DVector<f64>,
    pub ci_lower: DVector<f64>,
    pub ci_upper: DVector<f64>,
    pub alpha: f64,
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Diagonal blocks of `Theta Sigma Theta^T` for the given index ranges.
fn sandwich_blocks(theta: &DMatrix<f64>, sigma_hat: &DMatrix<f64>, ranges: &[std::ops::Range<usize>]) -> Vec<DMatrix<f64>> {
    let ts = theta * sigma_hat;
    ranges
        .iter()
        .map(|r| {
            let rows = ts.rows(r.start, r.len());
            let th = theta.rows(r.start, r.len());
            rows * th.transpose()
        })
        .collect()
}

/// `se_j = sqrt(sigma^2 (Theta Sigma Theta^T)_jj / n)`, intervals `beta_d -/+ z se`.
pub fn confidence_intervals(
    beta_hat: &DVector<f64>,
    beta_d: &DVector<f64>,
    sigma2: f64,
    theta: &DMatrix<f64>,
    sigma_hat: &DMatrix<f64>,
    n: usize,
    alpha: f64,
) -> Result<DebiasOutput> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(SsglError::InvalidConfig(format!("alpha = {alpha} must lie in (0, 1)")));
    }
    let p = beta_d.len();
    let ranges: Vec<_> = (0..p).map(|j| j..j + 1).collect();
    let var: Vec<f64> = sandwich_blocks(theta, sigma_hat, &ranges)
        .into_iter()
        .map(|b| b[(0, 0)])
        .collect();
    let se = DVector::from_fn(p, |j, _| (sigma2 * var[j].max(0.0) / n as f64).sqrt());
    Ok(intervals(beta_hat.clone(), beta_d.clone(), se, alpha))
}

fn intervals(beta_hat: DVector<f64>, beta_d: DVector<f64>, se: DVector<f64>, alpha: f64) -> DebiasOutput {
    let z = normal_quantile(1.0 - alpha / 2.0);
    let ci_lower = &beta_d - &se * z;
    let ci_upper = &beta_d + &se * z;
    DebiasOutput {
        beta_hat,
        beta_d,
        se,
        ci_lower,
        ci_upper,
        alpha,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebiasReport {
    /// On the orthonormalized working scale.
    pub working: DebiasOutput,
    /// Mapped group by group through the stored transforms.
    pub original: DebiasOutput,
    pub nodewise: NodewiseResult,
}

/// Nodewise regressions on the fitted design, de-biasing, and intervals on both scales.
pub fn debiased_inference(
    design: &GroupedDesign,
    beta_hat: &DVector<f64>,
    sigma2: f64,
    lambdas: &[f64],
    alpha: f64,
) -> Result<DebiasReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(SsglError::InvalidConfig(format!("alpha = {alpha} must lie in (0, 1)")));
    }
    let x = design.x();
    let n = design.n();
    let nodewise = build_theta(x, lambdas)?;
    let beta_d = debias(beta_hat, x, design.y(), &nodewise.theta)?;
    let sigma_hat = gram_matrix(x);
    let ranges: Vec<_> = (0..design.n_groups()).map(|g| design.group_range(g)).collect();
    let blocks = sandwich_blocks(&nodewise.theta, &sigma_hat, &ranges);

    let p = design.p();
    let mut se_w = DVector::zeros(p);
    let mut se_o = DVector::zeros(p);
    for (g, (r, v)) in ranges.iter().zip(&blocks).enumerate() {
        let t = &design.transforms()[g].matrix;
        let vo = t * v * t.transpose();
        for k in 0..r.len() {
            se_w[r.start + k] = (sigma2 * v[(k, k)].max(0.0) / n as f64).sqrt();
            se_o[r.start + k] = (sigma2 * vo[(k, k)].max(0.0) / n as f64).sqrt();
        }
    }
    let working = intervals(beta_hat.clone(), beta_d.clone(), se_w, alpha);
    let original = intervals(design.to_original(beta_hat)?, design.to_original(&beta_d)?, se_o, alpha);
    Ok(DebiasReport {
        working,
        original,
        nodewise,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        for mut c in x.column_iter_mut() {
            let m = c.mean();
            c.add_scalar_mut(-m);
        }
        x
    }

    #[test]
    fn orthogonal_predictors_unpenalized() {
        // Hadamard-like orthogonal columns
        let n = 8;
        let x = DMatrix::from_fn(n, 3, |i, j| if (i >> j) & 1 == 0 { 1.0 } else { -1.0 } * (j + 1) as f64);
        let gram = gram_matrix(&x);
        let g = lasso_cd(&gram, 0, 0.0).unwrap();
        assert!(g.amax() < 1e-12);
        let res = build_theta(&x, &[0.0; 3]).unwrap();
        for j in 0..3 {
            let expected = n as f64 / x.column(j).norm_squared();
            assert!((res.theta[(j, j)] - expected).abs() < 1e-12);
        }
        let prod = &res.theta * gram;
        assert!((prod - DMatrix::identity(3, 3)).amax() < 1e-12);
    }

    #[test]
    fn lambda_above_null_threshold_gives_zero() {
        let x = gaussian(40, 6, 1);
        let gram = gram_matrix(&x);
        let lmax = (1..6).map(|k| gram[(k, 0)].abs()).fold(0.0, f64::max);
        let g = lasso_cd(&gram, 0, lmax * 1.0001).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn small_instance_satisfies_subgradient_conditions() {
        let x = gaussian(30, 5, 2);
        let gram = gram_matrix(&x);
        for j in 0..5 {
            for &lam in &[0.01, 0.05, 0.2] {
                let g = lasso_cd(&gram, j, lam).unwrap();
                // recompute X_k^T r / n directly from X
                let xj = x.column(j).clone_owned();
                let r = xj - &x * &g;
                for k in (0..5).filter(|&k| k != j) {
                    let c = x.column(k).dot(&r) / 30.0;
                    if g[k] == 0.0 {
                        assert!(c.abs() <= lam + 1e-7);
                    } else {
                        assert!((c - lam * g[k].signum()).abs() <= 1e-7);
                    }
                }
            }
        }
    }

    #[test]
    fn unpenalized_theta_is_the_inverse() {
        let x = gaussian(60, 6, 3);
        let res = build_theta(&x, &[0.0; 6]).unwrap();
        let inv = gram_matrix(&x).try_inverse().unwrap();
        assert!((&res.theta - inv).amax() < 1e-6);
    }

    #[test]
    fn exact_inverse_recovers_ols() {
        let x = gaussian(50, 5, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y = DVector::from_fn(50, |_, _| rng.sample::<f64, _>(StandardNormal));
        let res = build_theta(&x, &[0.0; 5]).unwrap();
        let ols = (x.transpose() * &x).try_inverse().unwrap() * x.transpose() * &y;
        for _ in 0..3 {
            let b = DVector::from_fn(5, |_, _| rng.random_range(-3.0..3.0));
            let bd = debias(&b, &x, &y, &res.theta).unwrap();
            assert!((bd - &ols).amax() < 1e-8);
        }
        // zero residual leaves the estimate unchanged
        let y0 = &x * &ols;
        let bd = debias(&ols, &x, &y0, &res.theta).unwrap();
        assert!((bd - &ols).amax() < 1e-12);
    }

    #[test]
    fn interval_widths() {
        let p = 3;
        let id = DMatrix::identity(p, p);
        let b = DVector::from_vec(vec![0.1, -0.2, 0.3]);
        let out = confidence_intervals(&b, &b, 1.0, &id, &id, 100, 0.05).unwrap();
        for j in 0..p {
            let half = (out.ci_upper[j] - out.ci_lower[j]) / 2.0;
            assert!((half - 1.959964 / 10.0).abs() < 1e-6);
            assert!(out.ci_lower[j] <= out.beta_d[j] && out.beta_d[j] <= out.ci_upper[j]);
        }
        let out = confidence_intervals(&b, &b, 1.0, &id, &id, 100, 0.5).unwrap();
        let half = (out.ci_upper[0] - out.ci_lower[0]) / 2.0;
        assert!((half - 0.6744898 / 10.0).abs() < 1e-6);
        assert!(confidence_intervals(&b, &b, 1.0, &id, &id, 100, 1.0).is_err());
        let wide = confidence_intervals(&b, &b, 2.0, &id, &id, 100, 0.05).unwrap();
        assert!(wide.se[0] > out.se[0]);
    }

    #[test]
    fn degenerate_column_is_reported() {
        let mut x = gaussian(20, 3, 5);
        let c0 = x.column(0).clone_owned();
        x.set_column(2, &c0);
        let err = build_theta(&x, &[0.0; 3]).unwrap_err();
        assert!(matches!(err, SsglError::DegenerateColumn { .. }));
    }
}
