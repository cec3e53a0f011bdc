//! Manipulability reduction along the estimated attack direction.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::controller::TaskJacobian;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, softplus, symmetrize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ManipConfig {
    pub alpha: f64,
    pub d_diag: Vec<f64>,
    pub nu_max: f64,
    pub armijo_c: f64,
    pub armijo_beta: f64,
    pub max_backtracks: usize,
    pub grad_zero_tol: f64,
    pub quota: f64,
    pub softplus_eps: f64,
    /// Smooth blend of the Hessian weighting instead of the hard switch.
    pub blend: bool,
    /// Regularizer in the direction normalization.
    pub direction_eps: f64,
}

impl Default for ManipConfig {
    fn default() -> Self {
        Self {
            alpha: 10.0,
            d_diag: vec![1.0; 7],
            nu_max: 5.0,
            armijo_c: 1e-4,
            armijo_beta: 0.5,
            max_backtracks: 30,
            grad_zero_tol: 1e-4,
            quota: 0.3,
            softplus_eps: 1e-6,
            blend: false,
            direction_eps: 1e-9,
        }
    }
}

impl ManipConfig {
    pub fn validate(&self, dof: usize) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if self.d_diag.len() != dof || self.d_diag.iter().any(|&d| !(d > 0.0)) {
            return bad("d_diag must hold one positive weight per joint");
        }
        if !(self.alpha >= 0.0 && self.nu_max > 0.0 && self.grad_zero_tol > 0.0 && self.direction_eps > 0.0) {
            return bad("alpha, nu_max, grad_zero_tol, direction_eps out of range");
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0 && self.armijo_beta > 0.0 && self.armijo_beta < 1.0) {
            return bad("Armijo constants must lie in (0,1)");
        }
        if !(0.0..1.0).contains(&self.quota) {
            return bad("quota must lie in [0,1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackDirection {
    pub d: Vector3<f64>,
    pub magnitude: f64,
}

/// `d = (p̃ − p̄)/(‖p̃ − p̄‖ + ε)`
pub fn estimate_direction(p_tilde: &Vector3<f64>, p_ref: &Vector3<f64>, eps: f64) -> AttackDirection {
    let diff = p_tilde - p_ref;
    let magnitude = diff.norm();
    AttackDirection {
        d: diff / (magnitude + eps),
        magnitude,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NullStep {
    pub u_sec: DVector<f64>,
    pub nu: f64,
    /// False when backtracking ran out without sufficient decrease.
    pub armijo_accepted: bool,
}

/// `u_sec = −ν (I − J†J) ∇C` with ν from backtracking Armijo on `cost`
/// along the projected direction.
pub fn null_space_command<F>(
    q: &DVector<f64>,
    task: &TaskJacobian,
    grad: &DVector<f64>,
    cost: F,
    cfg: &ManipConfig,
) -> NullStep
where
    F: Fn(&DVector<f64>) -> f64,
{
    let n = q.len();
    let zero = NullStep {
        u_sec: DVector::zeros(n),
        nu: 0.0,
        armijo_accepted: true,
    };
    if grad.norm() <= cfg.grad_zero_tol {
        return zero;
    }
    let dir = grad - &task.pinv * (&task.j * grad);
    let slope = grad.dot(&dir);
    if !(slope > 0.0) || dir.norm() <= 1e-12 * grad.norm() {
        return zero;
    }
    let c0 = cost(q);
    let mut nu = cfg.nu_max;
    let mut accepted = false;
    for _ in 0..=cfg.max_backtracks {
        if cost(&(q - &dir * nu)) <= c0 - cfg.armijo_c * nu * slope {
            accepted = true;
            break;
        }
        nu *= cfg.armijo_beta;
    }
    if !accepted {
        nu /= cfg.armijo_beta;
        log::debug!("Armijo backtracking exhausted; using nu = {nu:e}");
    }
    NullStep {
        u_sec: -dir * nu,
        nu,
        armijo_accepted: accepted,
    }
}

/// Smooth cutoff: 1 at 0, 0 from 2 on.
pub fn blend_cutoff(x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else if x >= 2.0 {
        0.0
    } else {
        0.5 * (1.0 + (std::f64::consts::FRAC_PI_2 * x).cos())
    }
}

/// Fraction of the Hessian term entering the weight matrix.
pub fn hessian_weight(grad_norm: f64, cfg: &ManipConfig) -> f64 {
    if cfg.blend {
        blend_cutoff(grad_norm / cfg.grad_zero_tol)
    } else if grad_norm <= cfg.grad_zero_tol {
        1.0
    } else {
        0.0
    }
}

/// `μ = log(1 + exp(ε − λ_min))`
pub fn softplus_shift(hessian: &DMatrix<f64>, eps: f64) -> f64 {
    let lambda_min = symmetrize(hessian).symmetric_eigenvalues().min();
    softplus(eps - lambda_min)
}

/// `W = D + α s (∇²C + μI)`
pub fn weight_matrix(cfg: &ManipConfig, hessian: Option<&DMatrix<f64>>, grad_norm: f64) -> Result<DMatrix<f64>> {
    let n = cfg.d_diag.len();
    let mut w = DMatrix::from_diagonal(&DVector::from_column_slice(&cfg.d_diag));
    let s = hessian_weight(grad_norm, cfg);
    if s > 0.0 && cfg.alpha > 0.0 {
        let h = hessian.ok_or_else(|| Error::InvalidParameter("Hessian required near stationarity".into()))?;
        let mu = softplus_shift(h, cfg.softplus_eps);
        w += (symmetrize(h) + DMatrix::identity(n, n) * mu) * (cfg.alpha * s);
    }
    Ok(w)
}

/// `J★ = W⁻¹Jᵀ(J W⁻¹ Jᵀ)⁻¹`
pub fn weighted_pseudoinverse(j: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let w_chol = cholesky(w, "weight matrix W")?;
    let winv_jt = w_chol.solve(&j.transpose());
    let inner = j * &winv_jt;
    let inner_chol = cholesky(&inner, "J W⁻¹ Jᵀ")?;
    let inv = inner_chol.inverse();
    Ok(winv_jt * inv)
}

/// `‖J J★ − I‖_max`
pub fn consistency_error(j: &DMatrix<f64>, j_star: &DMatrix<f64>) -> f64 {
    let m = j * j_star - DMatrix::identity(j.nrows(), j.nrows());
    m.amax()
}
