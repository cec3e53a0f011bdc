//! Measurement-free actuation-projected predictor `x̃` and its residual
//! against the Kalman estimate.
//!
//! Under no attack the residual `r̃_k = x̂_k − x̃_k` is zero-mean Gaussian with
//! a covariance that depends only on the steps since the last resync. The
//! covariance is obtained from the joint recursion of the estimation error
//! `e = x − x̂` and `r̃`:
//!
//! ```text
//! Ξ_{i+1} = F Ξ_i Fᵀ + Γ diag(Q, R) Γᵀ,    Ξ_0 = diag(P, 0)
//! F = [[A − L C, 0], [L C, A]],   Γ = [[I, −L], [0, L]]
//! ```
//!
//! and the table keeps the lower-right blocks for `k = 1..=K_max`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimator::{EstimatorGains, EstimatorState};
use crate::linalg::{block_diag, inv_quad_form, symmetrize, Chol};
use crate::plant::PlantModel;

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorState {
    pub x_tilde: DVector<f64>,
    pub k_since_resync: usize,
}

pub fn resync(est: &EstimatorState) -> ProjectorState {
    ProjectorState {
        x_tilde: est.x_hat.clone(),
        k_since_resync: 0,
    }
}

/// `x̃' = A x̃ + B u` with the command actually applied to the plant.
pub fn project_step(ps: &ProjectorState, u: &DVector<f64>, model: &PlantModel) -> ProjectorState {
    ProjectorState {
        x_tilde: &model.a * &ps.x_tilde + &model.b * u,
        k_since_resync: ps.k_since_resync + 1,
    }
}

pub fn residual(ps: &ProjectorState, est: &EstimatorState) -> DVector<f64> {
    &est.x_hat - &ps.x_tilde
}

/// Precomputed residual covariances `Σ_{r̃,k}` and their Cholesky factors.
#[derive(Debug, Clone)]
pub struct ResidualCovTable {
    covs: Vec<DMatrix<f64>>,
    chols: Vec<Option<Chol>>,
}

impl ResidualCovTable {
    pub fn k_max(&self) -> usize {
        self.covs.len()
    }

    /// `Σ_{r̃,k}` for `1 ≤ k ≤ K_max`.
    pub fn cov(&self, k: usize) -> Option<&DMatrix<f64>> {
        k.checked_sub(1).and_then(|i| self.covs.get(i))
    }

    /// Projected anomaly score `z̃_k = r̃ᵀ Σ_{r̃,k}⁻¹ r̃`.
    pub fn score(&self, k: usize, r_tilde: &DVector<f64>) -> Result<f64> {
        let chol = k
            .checked_sub(1)
            .and_then(|i| self.chols.get(i))
            .and_then(|c| c.as_ref())
            .ok_or(Error::SingularResidualCovariance(k))?;
        Ok(inv_quad_form(chol, r_tilde))
    }

    /// Whether `trace Σ_{r̃,k}` is non-decreasing in `k`. Reported, not enforced.
    pub fn trace_monotone(&self) -> bool {
        self.covs
            .windows(2)
            .all(|w| w[1].trace() >= w[0].trace() * (1.0 - 1e-12))
    }
}

pub struct AugmentedSystem {
    pub f: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub pi: DMatrix<f64>,
    pub xi0: DMatrix<f64>,
}

pub fn augmented_system(gains: &EstimatorGains, model: &PlantModel) -> AugmentedSystem {
    let s = model.state_dim();
    let p = model.meas_dim();
    let lc = &gains.l * &model.c;
    let mut f = DMatrix::zeros(2 * s, 2 * s);
    f.view_mut((0, 0), (s, s)).copy_from(&(&model.a - &lc));
    f.view_mut((s, 0), (s, s)).copy_from(&lc);
    f.view_mut((s, s), (s, s)).copy_from(&model.a);

    let mut gamma = DMatrix::zeros(2 * s, s + p);
    gamma.view_mut((0, 0), (s, s)).fill_with_identity();
    gamma.view_mut((0, s), (s, p)).copy_from(&(-&gains.l));
    gamma.view_mut((s, s), (s, p)).copy_from(&gains.l);

    let noise = block_diag(&[model.q.clone(), model.r.clone()]);
    let pi = symmetrize(&(&gamma * noise * gamma.transpose()));
    let xi0 = block_diag(&[gains.p.clone(), DMatrix::zeros(s, s)]);
    AugmentedSystem { f, gamma, pi, xi0 }
}

pub fn covariance_recursion(gains: &EstimatorGains, model: &PlantModel, k_max: usize) -> Result<ResidualCovTable> {
    if k_max == 0 {
        return Err(Error::InvalidParameter("K_max must be >= 1".into()));
    }
    let s = model.state_dim();
    let sys = augmented_system(gains, model);
    let ft = sys.f.transpose();
    let mut xi = sys.xi0;
    let mut covs = Vec::with_capacity(k_max);
    let mut chols = Vec::with_capacity(k_max);
    for _ in 0..k_max {
        xi = symmetrize(&(&sys.f * &xi * &ft + &sys.pi));
        let block = xi.view((s, s), (s, s)).into_owned();
        chols.push(nalgebra::Cholesky::new(block.clone()));
        covs.push(block);
    }
    Ok(ResidualCovTable { covs, chols })
}

pub fn anomaly_score(r_tilde: &DVector<f64>, sigma_k: &DMatrix<f64>) -> Result<f64> {
    let chol = nalgebra::Cholesky::new(symmetrize(sigma_k)).ok_or(Error::NotPositiveDefinite("Σ_r̃,k"))?;
    Ok(inv_quad_form(&chol, r_tilde))
}
