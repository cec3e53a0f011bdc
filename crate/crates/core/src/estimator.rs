//! Steady-state Kalman filter in single-step innovation (predictor) form.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{block_diag, cholesky, riccati_map, solve_riccati, symmetrize, Chol};
use crate::plant::PlantModel;

/// Steady gains of the filter. Immutable once built.
#[derive(Debug, Clone)]
pub struct EstimatorGains {
    /// Stabilizing DARE solution (prior error covariance).
    pub p: DMatrix<f64>,
    /// Innovation covariance `C P Cᵀ + R`.
    pub sigma: DMatrix<f64>,
    pub sigma_chol: Chol,
    /// `A P Cᵀ Σ⁻¹`.
    pub l: DMatrix<f64>,
}

impl EstimatorGains {
    fn from_p(a: &DMatrix<f64>, c: &DMatrix<f64>, r: &DMatrix<f64>, p: DMatrix<f64>) -> Result<Self> {
        let p = symmetrize(&p);
        let sigma = symmetrize(&(c * &p * c.transpose() + r));
        let sigma_chol = cholesky(&sigma, "Σ")?;
        // L = A P Cᵀ Σ⁻¹  ⇔  Σ Lᵀ = C P Aᵀ
        let l = sigma_chol.solve(&(c * &p * a.transpose())).transpose();
        Ok(Self {
            p,
            sigma,
            sigma_chol,
            l,
        })
    }

    /// Production path: one 2×2 DARE per joint, assembled block diagonally.
    /// Requires the per-joint block structure produced by
    /// [`PlantModel::double_integrator`].
    pub fn for_plant(model: &PlantModel) -> Result<Self> {
        let mut blocks = Vec::with_capacity(model.n);
        for j in 0..model.n {
            let blk = |m: &DMatrix<f64>| m.view((2 * j, 2 * j), (2, 2)).into_owned();
            blocks.push(solve_riccati(
                &blk(&model.a),
                &blk(&model.c),
                &blk(&model.q),
                &blk(&model.r),
            )?);
        }
        Self::from_p(&model.a, &model.c, &model.r, block_diag(&blocks))
    }

    /// DARE residual `‖P − f(P)‖_F / ‖P‖_F` (absolute when `P = 0`).
    pub fn dare_residual(&self, model: &PlantModel) -> Result<f64> {
        let f = riccati_map(&model.a, &model.c, &model.q, &model.r, &self.p)?;
        let diff = (&self.p - f).norm();
        let scale = self.p.norm();
        Ok(if scale > 0.0 { diff / scale } else { diff })
    }
}

/// Solve the filter DARE by fixed-point iteration on the full system.
pub fn solve_dare(a: &DMatrix<f64>, c: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<EstimatorGains> {
    if a.nrows() != a.ncols() || c.ncols() != a.nrows() || r.nrows() != c.nrows() {
        return Err(Error::InvalidParameter("DARE dimensions".into()));
    }
    cholesky(r, "R")?;
    let p = solve_riccati(a, c, q, r)?;
    EstimatorGains::from_p(a, c, r, p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    pub x_hat: DVector<f64>,
    pub last_innovation: DVector<f64>,
}

impl EstimatorState {
    pub fn new(x_hat: DVector<f64>, meas_dim: usize) -> Self {
        Self {
            x_hat,
            last_innovation: DVector::zeros(meas_dim),
        }
    }
}

/// `r = ỹ − C x̂`, `x̂' = A x̂ + B u + L r`. `u` is the command actually
/// applied to the plant.
pub fn kalman_step(
    est: &EstimatorState,
    gains: &EstimatorGains,
    u: &DVector<f64>,
    y_tilde: &DVector<f64>,
    model: &PlantModel,
) -> EstimatorState {
    let r = y_tilde - &model.c * &est.x_hat;
    let x_hat = &model.a * &est.x_hat + &model.b * u + &gains.l * &r;
    EstimatorState {
        x_hat,
        last_innovation: r,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{measure, plant_step, NoiseSource, PlantParams, PlantState};

    fn m1(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn scalar_dare_golden_ratio() {
        let g = solve_dare(&m1(1.0), &m1(1.0), &m1(1.0), &m1(1.0)).unwrap();
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((g.p[(0, 0)] - phi).abs() < 1e-10);
        assert!((g.sigma[(0, 0)] - (phi + 1.0)).abs() < 1e-10);
    }

    #[test]
    fn zero_noise_stable_system() {
        let g = solve_dare(&m1(0.5), &m1(1.0), &m1(0.0), &m1(1.0)).unwrap();
        assert_eq!(g.p[(0, 0)], 0.0);
    }

    #[test]
    fn blockwise_matches_full_iteration() {
        let model = PlantModel::double_integrator(&PlantParams::default()).unwrap();
        let fast = EstimatorGains::for_plant(&model).unwrap();
        let full = solve_dare(&model.a, &model.c, &model.q, &model.r).unwrap();
        let rel = (&fast.p - &full.p).norm() / full.p.norm();
        assert!(rel < 1e-9, "rel {rel}");
        assert!(fast.dare_residual(&model).unwrap() <= 1e-9);
        // L = A P Cᵀ Σ⁻¹ recomputed with an explicit inverse.
        let l = &model.a * &fast.p * model.c.transpose() * fast.sigma.clone().try_inverse().unwrap();
        assert!((&l - &fast.l).norm() <= 1e-9 * l.norm());
    }

    #[test]
    fn dare_invariant_under_permutation() {
        let model = PlantModel::double_integrator(&PlantParams::default()).unwrap();
        let s = model.state_dim();
        // stacked ordering [q; q̇] instead of interleaved
        let mut perm = DMatrix::zeros(s, s);
        for j in 0..model.n {
            perm[(j, 2 * j)] = 1.0;
            perm[(model.n + j, 2 * j + 1)] = 1.0;
        }
        let t = |m: &DMatrix<f64>| &perm * m * perm.transpose();
        let g = solve_dare(&t(&model.a), &t(&model.c), &t(&model.q), &t(&model.r)).unwrap();
        let back = perm.transpose() * &g.p * &perm;
        let reference = EstimatorGains::for_plant(&model).unwrap();
        assert!((&back - &reference.p).norm() <= 1e-9 * reference.p.norm());
    }

    #[test]
    fn kalman_step_examples() {
        let model = PlantModel::double_integrator(&PlantParams::default()).unwrap();
        let g = EstimatorGains::for_plant(&model).unwrap();
        let x_hat = DVector::from_fn(14, |i, _| 0.1 * i as f64);
        let est = EstimatorState::new(x_hat.clone(), 14);
        let next = kalman_step(&est, &g, &DVector::zeros(7), &x_hat, &model);
        assert_eq!(next.last_innovation, DVector::zeros(14));
        assert_eq!(next.x_hat, &model.a * &x_hat);

        let est0 = EstimatorState::new(DVector::zeros(14), 14);
        let mut e1 = DVector::zeros(14);
        e1[0] = 1.0;
        let next = kalman_step(&est0, &g, &DVector::zeros(7), &e1, &model);
        assert_eq!(next.last_innovation, e1);
        assert_eq!(next.x_hat, g.l.column(0).into_owned());
    }

    fn innovation_run(steps: usize, seed: u64) -> (Vec<DVector<f64>>, DMatrix<f64>) {
        let model = PlantModel::double_integrator(&PlantParams::default()).unwrap();
        let g = EstimatorGains::for_plant(&model).unwrap();
        let mut noise = NoiseSource::new(&model, seed);
        let mut plant = PlantState::new(DVector::zeros(14));
        let e0 = noise.gaussian(&crate::linalg::psd_sqrt(&g.p));
        let mut est = EstimatorState::new(&plant.x - e0, 14);
        let u = DVector::zeros(7);
        let zero = DVector::zeros(14);
        let mut rs = Vec::with_capacity(steps);
        for _ in 0..steps {
            let (w, v) = noise.step_draws();
            let y = measure(&plant, &zero, &model, Some(&v)).unwrap();
            est = kalman_step(&est, &g, &u, &y, &model);
            rs.push(est.last_innovation.clone());
            plant = plant_step(&plant, &u, &model, Some(&w)).unwrap();
        }
        (rs, g.sigma)
    }

    #[test]
    fn innovation_covariance_and_whiteness() {
        let (rs, sigma) = innovation_run(10_000, 3);
        let n = rs.len() as f64;
        let cov = rs.iter().fold(DMatrix::zeros(14, 14), |acc, r| acc + r * r.transpose()) / n;
        let rel = (&cov - &sigma).norm() / sigma.norm();
        assert!(rel < 0.1, "cov rel {rel}");
        for ch in 0..14 {
            let var: f64 = rs.iter().map(|r| r[ch] * r[ch]).sum::<f64>();
            let lag: f64 = rs.windows(2).map(|w| w[0][ch] * w[1][ch]).sum::<f64>();
            let rho = lag / var;
            assert!(rho.abs() < 0.05, "channel {ch} lag-1 autocorrelation {rho}");
        }
    }
}
