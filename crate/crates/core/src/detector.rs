//! χ² anomaly detector on Kalman innovations.
//!
//! The chi-square distribution functions are evaluated through the
//! regularized incomplete gamma functions (series expansion below `a + 1`,
//! Lentz continued fraction above), and inverted by bracketing bisection.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, inv_quad_form, Chol};

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS_COEF[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

fn gamma_series(a: f64, x: f64) -> f64 {
    let mut term = 1.0 / a;
    let mut sum = term;
    let mut ap = a;
    for _ in 0..10_000 {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * 1e-17 {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

fn gamma_continued_fraction(a: f64, x: f64) -> f64 {
    let tiny = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..10_000 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x < a + 1.0 {
        gamma_series(a, x)
    } else {
        1.0 - gamma_continued_fraction(a, x)
    }
}

/// Regularized upper incomplete gamma `Q(a, x) = 1 − P(a, x)`, accurate in the tail.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else if x < a + 1.0 {
        1.0 - gamma_series(a, x)
    } else {
        gamma_continued_fraction(a, x)
    }
}

pub fn chi2_cdf(x: f64, dof: u32) -> f64 {
    gamma_p(dof as f64 / 2.0, x / 2.0)
}

pub fn chi2_sf(x: f64, dof: u32) -> f64 {
    gamma_q(dof as f64 / 2.0, x / 2.0)
}

fn bisect_decreasing<F: Fn(f64) -> f64>(f: F, target: f64) -> f64 {
    // f is monotone decreasing on [0, ∞); find x with f(x) = target.
    let mut lo = 0.0;
    let mut hi = 1.0;
    while f(hi) > target {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn check_dof(dof: u32) -> Result<()> {
    if dof == 0 {
        return Err(Error::InvalidParameter("chi-square dof must be positive".into()));
    }
    Ok(())
}

/// Inverse CDF `F⁻¹_{χ²(dof)}(prob)`.
pub fn chi2_inv_cdf(prob: f64, dof: u32) -> Result<f64> {
    check_dof(dof)?;
    if !(prob > 0.0 && prob < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "probability must lie in (0,1), got {prob}"
        )));
    }
    if prob > 0.5 {
        return chi2_inv_sf(1.0 - prob, dof);
    }
    Ok(bisect_decreasing(|x| -chi2_cdf(x, dof), -prob))
}

/// Inverse survival function: `x` with `P(χ²(dof) > x) = alpha`. Accurate for
/// tiny `alpha` where `1 − alpha` would round.
pub fn chi2_inv_sf(alpha: f64, dof: u32) -> Result<f64> {
    check_dof(dof)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "tail probability must lie in (0,1), got {alpha}"
        )));
    }
    Ok(bisect_decreasing(|x| chi2_sf(x, dof), alpha))
}

/// Alarm threshold and its false-alarm interpretation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub tau: f64,
    /// Per-step false-alarm probability under H0.
    pub alpha_f: f64,
    pub dof: u32,
}

impl DetectorConfig {
    pub fn from_tau(tau: f64, dof: u32) -> Result<Self> {
        check_dof(dof)?;
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::InvalidParameter(format!("tau must be > 0, got {tau}")));
        }
        Ok(Self {
            tau,
            alpha_f: chi2_sf(tau, dof),
            dof,
        })
    }

    pub fn from_alpha(alpha_f: f64, dof: u32) -> Result<Self> {
        Ok(Self {
            tau: chi2_inv_sf(alpha_f, dof)?,
            alpha_f,
            dof,
        })
    }

    /// ARL in samples: `ARL = 1/α_F`.
    pub fn from_arl(arl_samples: f64, dof: u32) -> Result<Self> {
        if !(arl_samples > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "ARL must exceed one sample, got {arl_samples}"
            )));
        }
        Self::from_alpha(1.0 / arl_samples, dof)
    }

    /// Accepts a config carrying both τ and α_F if they agree within 1e-6.
    pub fn checked(tau: f64, alpha_f: f64, dof: u32) -> Result<Self> {
        let from_alpha = chi2_inv_sf(alpha_f, dof)?;
        if (from_alpha - tau).abs() > 1e-6 * tau.max(1.0) {
            return Err(Error::InvalidParameter(format!(
                "tau {tau} inconsistent with alpha_F {alpha_f} (expected {from_alpha})"
            )));
        }
        Ok(Self { tau, alpha_f, dof })
    }

    pub fn arl_samples(&self) -> f64 {
        1.0 / self.alpha_f
    }
}

/// `z = rᵀ Σ⁻¹ r` through the stored Cholesky factor.
pub fn mahalanobis_chol(r: &DVector<f64>, sigma_chol: &Chol) -> f64 {
    inv_quad_form(sigma_chol, r)
}

pub fn mahalanobis(r: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    let chol = cholesky(sigma, "Σ")?;
    Ok(mahalanobis_chol(r, &chol))
}

pub fn alarm(z: f64, cfg: &DetectorConfig) -> bool {
    z > cfg.tau
}
