//! Spike-and-slab group lasso penalty calculus.
//!
//! Everything that involves the ratio of the two group lasso densities is
//! evaluated through the log-odds
//! `log(theta / (1 - theta)) + m log(lambda1 / lambda0) + (lambda0 - lambda1) * norm`,
//! which stays finite for spike rates far beyond where `lambda0^m` overflows.

use statrs::function::gamma::ln_gamma;

use crate::error::{Result, SsglError};

/// `log C_m` for the group lasso density normalizing constant
/// `C_m = 2^{-m} pi^{-(m-1)/2} / Gamma((m+1)/2)`.
pub fn log_norm_const(m: usize) -> f64 {
    let m = m as f64;
    -m * std::f64::consts::LN_2 - 0.5 * (m - 1.0) * std::f64::consts::PI.ln() - ln_gamma(0.5 * (m + 1.0))
}

/// Log of the group lasso density at a coefficient block with the given norm.
pub fn group_lasso_log_density(norm: f64, lambda: f64, m: usize) -> f64 {
    log_norm_const(m) + m as f64 * lambda.ln() - lambda * norm
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(sigmoid(x))` without cancellation.
#[inline]
fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Hyperparameters for one group: spike/slab rates, mixing weight, noise level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyParams {
    /// Spike rate, already multiplied by `sqrt(m)`.
    pub lambda0: f64,
    pub lambda1: f64,
    pub theta: f64,
    pub sigma2: f64,
    pub n: usize,
    pub m: usize,
}

impl PenaltyParams {
    pub fn new(lambda0: f64, lambda1: f64, theta: f64, sigma2: f64, n: usize, m: usize) -> Result<Self> {
        let p = PenaltyParams {
            lambda0,
            lambda1,
            theta,
            sigma2,
            n,
            m,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda1 > 0.0
            && self.lambda0 >= self.lambda1
            && self.lambda0.is_finite()
            && self.theta > 0.0
            && self.theta < 1.0
            && self.sigma2 > 0.0
            && self.sigma2.is_finite()
            && self.n > 0
            && self.m > 0;
        if ok {
            Ok(())
        } else {
            Err(SsglError::InvalidConfig(format!("invalid penalty parameters {self:?}")))
        }
    }

    /// Log-odds of slab versus spike at a block with the given norm.
    #[inline]
    pub fn log_odds(&self, norm: f64) -> f64 {
        (self.theta / (1.0 - self.theta)).ln()
            + self.m as f64 * (self.lambda1 / self.lambda0).ln()
            + (self.lambda0 - self.lambda1) * norm
    }

    /// Conditional probability that the block came from the slab.
    pub fn p_star(&self, norm: f64) -> f64 {
        sigmoid(self.log_odds(norm))
    }

    pub fn log_p_star(&self, norm: f64) -> f64 {
        log_sigmoid(self.log_odds(norm))
    }

    /// Adaptive rate `lambda1 p* + lambda0 (1 - p*)`.
    pub fn lambda_star(&self, norm: f64) -> f64 {
        let ps = self.p_star(norm);
        self.lambda1 * ps + self.lambda0 * (1.0 - ps)
    }

    /// Separable penalty of one block relative to the zero block.
    pub fn pen_separable(&self, norm: f64) -> f64 {
        -self.lambda1 * norm + (self.log_p_star(0.0) - self.log_p_star(norm))
    }

    /// Sign of this quantity decides between the refined threshold and the
    /// plain soft-threshold level.
    pub fn h_at_zero(&self) -> f64 {
        let d = self.lambda_star(0.0) - self.lambda1;
        d * d + 2.0 * self.n as f64 / self.sigma2 * self.log_p_star(0.0)
    }

    pub fn delta_upper(&self) -> f64 {
        let l = (-self.log_p_star(0.0)).max(0.0);
        (2.0 * self.n as f64 * self.sigma2 * l).sqrt() + self.sigma2 * self.lambda1
    }

    /// Supremum of the admissible slack `d` in the lower threshold bound.
    pub fn d_sup(&self) -> f64 {
        let n = self.n as f64;
        let sigma = self.sigma2.sqrt();
        let t = n / (self.sigma2 * (self.lambda0 - self.lambda1)) - (2.0 * n).sqrt() / sigma;
        2.0 * n / self.sigma2 - t * t
    }

    /// Lower threshold bound with `d` at the top of its admissible range.
    pub fn delta_lower(&self) -> f64 {
        let l = (-self.log_p_star(0.0)).max(0.0);
        let d = self.d_sup().max(0.0);
        let inner = 2.0 * self.n as f64 * self.sigma2 * l - self.sigma2 * self.sigma2 * d;
        inner.max(0.0).sqrt() + self.sigma2 * self.lambda1
    }

    /// Threshold used by the solver: the refined upper bound when `h(0) > 0`,
    /// otherwise the soft-threshold level at zero.
    pub fn selection_threshold(&self) -> f64 {
        if self.h_at_zero() > 0.0 {
            self.delta_upper()
        } else {
            self.sigma2 * self.lambda_star(0.0)
        }
    }

    /// Norm at which the spike and slab densities intersect.
    pub fn omega_threshold(&self) -> Result<f64> {
        if self.lambda0 <= self.lambda1 {
            return Err(SsglError::InvalidConfig(
                "omega threshold requires lambda0 > lambda1".into(),
            ));
        }
        let m = self.m as f64;
        let v = ((1.0 - self.theta) / self.theta).ln() + m * (self.lambda0 / self.lambda1).ln();
        Ok(v / (self.lambda0 - self.lambda1))
    }

    /// Objective whose infimum over `t > 0` is the exact selection threshold.
    pub fn threshold_objective(&self, t: f64) -> f64 {
        0.5 * self.n as f64 * t - self.sigma2 * self.pen_separable(t) / t
    }

    /// Numerical infimum of [`threshold_objective`](Self::threshold_objective).
    ///
    /// Log-spaced scan over `[1e-8, 10 * delta_upper / n]` to bracket the
    /// minimum, then golden-section refinement to a relative width of `1e-10`.
    /// Meant for tests and diagnostics, not the solver loop.
    pub fn threshold_oracle(&self) -> Result<f64> {
        const T_MIN: f64 = 1e-8;
        const GRID: usize = 4000;
        let t_max = (10.0 * self.delta_upper() / self.n as f64).max(10.0 * T_MIN);
        let f = |t: f64| self.threshold_objective(t);

        let (lo, hi) = (T_MIN.ln(), t_max.ln());
        let ts: Vec<f64> = (0..GRID)
            .map(|i| (lo + (hi - lo) * i as f64 / (GRID - 1) as f64).exp())
            .collect();
        let mut best = 0usize;
        let mut best_val = f64::INFINITY;
        for (i, &t) in ts.iter().enumerate() {
            let v = f(t);
            if !v.is_finite() {
                return Err(SsglError::NonFinite(format!("threshold objective at t = {t:e}")));
            }
            if v < best_val {
                best_val = v;
                best = i;
            }
        }

        let mut a = ts[best.saturating_sub(1)];
        let mut b = ts[(best + 1).min(GRID - 1)];
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = b - inv_phi * (b - a);
        let mut d = a + inv_phi * (b - a);
        let (mut fc, mut fd) = (f(c), f(d));
        while (b - a) > 1e-10 * b.max(1e-300) {
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - inv_phi * (b - a);
                fc = f(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + inv_phi * (b - a);
                fd = f(d);
            }
        }
        let refined = f(0.5 * (a + b));
        Ok(best_val.min(refined).min(fc).min(fd))
    }
}
