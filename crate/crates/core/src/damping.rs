//! Anomaly-aware virtual damping driven by the projected anomaly score.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::detector::chi2_inv_cdf;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DampingConfig {
    pub rho_max: f64,
    pub rho_y: f64,
    pub exp_m: f64,
    /// Confidence level; sets the control point from the χ² quantile.
    pub psi: Option<f64>,
    /// Explicit control point, used when `psi` is absent.
    pub z_x: Option<f64>,
    pub eps_vel: f64,
}

impl Default for DampingConfig {
    fn default() -> Self {
        Self {
            rho_max: 1.2,
            rho_y: 0.01,
            exp_m: 2.0,
            psi: Some(0.99),
            z_x: None,
            eps_vel: 1e-4,
        }
    }
}

/// Validated damping parameters with the derived sigmoid scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Damping {
    pub rho_max: f64,
    pub rho_y: f64,
    pub exp_m: f64,
    pub z_x: f64,
    pub z_s: f64,
    pub eps_vel: f64,
}

impl Damping {
    pub fn new(cfg: &DampingConfig, dof: u32) -> Result<Self> {
        let z_x = match (cfg.psi, cfg.z_x) {
            (Some(psi), _) => chi2_inv_cdf(psi, dof)?,
            (None, Some(z)) => z,
            (None, None) => return Err(Error::InvalidParameter("damping needs psi or z_x".into())),
        };
        if !(cfg.rho_max > 0.0 && cfg.rho_y > 0.0 && cfg.rho_y < cfg.rho_max) {
            return Err(Error::InvalidParameter("need 0 < rho_y < rho_max".into()));
        }
        if !(cfg.exp_m > 0.0 && z_x > 0.0 && cfg.eps_vel >= 0.0) {
            return Err(Error::InvalidParameter(
                "exp_m, z_x must be positive and eps_vel non-negative".into(),
            ));
        }
        let z_s = z_s(z_x, cfg.rho_y, cfg.rho_max, cfg.exp_m);
        if !(z_s.is_finite() && z_s > 0.0) {
            return Err(Error::NonFinite("sigmoid scale z_s"));
        }
        Ok(Self {
            rho_max: cfg.rho_max,
            rho_y: cfg.rho_y,
            exp_m: cfg.exp_m,
            z_x,
            z_s,
            eps_vel: cfg.eps_vel,
        })
    }

    /// `φ(z̃) = ρ(1 − exp[−(z̃/z_s)^m])`
    pub fn phi(&self, z_tilde: f64) -> f64 {
        let z = z_tilde.max(0.0);
        -self.rho_max * (-(z / self.z_s).powf(self.exp_m)).exp_m1()
    }
}

/// Scale placing `φ(z_x) = ρ_y`.
pub fn z_s(z_x: f64, rho_y: f64, rho_max: f64, exp_m: f64) -> f64 {
    z_x * (-(-rho_y / rho_max).ln_1p()).powf(-1.0 / exp_m)
}

/// Per-joint command whose power against the projected velocity is
/// `−φ|P^nom_j|`; zero inside the velocity deadband.
pub fn ideal_damping(u_nom_sat: &DVector<f64>, qdot_tilde: &DVector<f64>, phi: f64, eps_vel: f64) -> DVector<f64> {
    DVector::from_iterator(
        u_nom_sat.len(),
        u_nom_sat.iter().zip(qdot_tilde.iter()).map(|(&u, &v)| {
            if v.abs() > eps_vel {
                -phi * (u * v).abs() / v
            } else {
                0.0
            }
        }),
    )
}

/// Clip the ideal command into `[u_min − Sat, u_max − Sat]`.
pub fn headroom_clip(
    u_ideal: &DVector<f64>,
    u_nom_sat: &DVector<f64>,
    u_min: &DVector<f64>,
    u_max: &DVector<f64>,
) -> DVector<f64> {
    DVector::from_fn(u_ideal.len(), |j, _| {
        let lo = (u_min[j] - u_nom_sat[j]).min(0.0);
        let hi = (u_max[j] - u_nom_sat[j]).max(0.0);
        u_ideal[j].min(hi).max(lo)
    })
}

/// `u = Sat{u_nom} + u_d`, checked against the limits.
pub fn final_control(
    u_nom_sat: &DVector<f64>,
    u_d: &DVector<f64>,
    u_min: &DVector<f64>,
    u_max: &DVector<f64>,
) -> Result<DVector<f64>> {
    let u = u_nom_sat + u_d;
    for j in 0..u.len() {
        let slack = 1e-12 * (u_max[j] - u_min[j]);
        if !u[j].is_finite() || u[j] < u_min[j] - slack || u[j] > u_max[j] + slack {
            return Err(Error::HeadroomViolation { joint: j, value: u[j] });
        }
    }
    Ok(DVector::from_fn(u.len(), |j, _| u[j].clamp(u_min[j], u_max[j])))
}
