//! Feedback-linearized manipulator as `n` decoupled, saturated, noisy
//! double integrators.
//!
//! State vectors are stored per joint, interleaved as `(q_j, q̇_j)` pairs, so
//! the matrices are block diagonal with one 2×2 block per joint. The sensor
//! vector uses the same layout (`C = I`).

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{block_diag, cholesky, psd_sqrt};

#[inline]
pub fn pos_index(joint: usize) -> usize {
    2 * joint
}

#[inline]
pub fn vel_index(joint: usize) -> usize {
    2 * joint + 1
}

/// Joint positions from an interleaved state (or sensor) vector.
pub fn positions(x: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(x.len() / 2, x.iter().step_by(2).copied())
}

/// Joint velocities from an interleaved state (or sensor) vector.
pub fn velocities(x: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(x.len() / 2, x.iter().skip(1).step_by(2).copied())
}

pub fn interleave(q: &DVector<f64>, qd: &DVector<f64>) -> DVector<f64> {
    let mut x = DVector::zeros(2 * q.len());
    for j in 0..q.len() {
        x[pos_index(j)] = q[j];
        x[vel_index(j)] = qd[j];
    }
    x
}

/// Noise and limit parameters of the virtual-mass plant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantParams {
    pub joints: usize,
    /// Sample time in seconds.
    pub ts: f64,
    /// Continuous white-noise acceleration intensity (rad²/s³).
    pub q_c: f64,
    pub sigma_pos: f64,
    pub sigma_vel: f64,
    /// Symmetric acceleration limits; `u_min = -u_max`.
    pub u_max: Vec<f64>,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            joints: 7,
            ts: 0.01,
            q_c: 3e-7,
            sigma_pos: 5e-5,
            sigma_vel: 1e-2,
            u_max: vec![1.0, 1.0, 1.0, 1.0, 10.0, 10.0, 10.0],
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantModel {
    pub n: usize,
    pub ts: f64,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub u_min: DVector<f64>,
    pub u_max: DVector<f64>,
}

impl PlantModel {
    /// Exact discretization of `n` double integrators with CWNA process noise
    /// `Q = Q_base ⊗ q_c I` and diagonal sensor noise.
    pub fn double_integrator(params: &PlantParams) -> Result<Self> {
        let n = params.joints;
        let ts = params.ts;
        if n == 0 || !(ts > 0.0) || !ts.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "plant needs joints > 0 and ts > 0 (got {n}, {ts})"
            )));
        }
        if params.u_max.len() != n {
            return Err(Error::InvalidParameter(format!(
                "u_max has {} entries, expected {n}",
                params.u_max.len()
            )));
        }
        if !(params.q_c >= 0.0) || !(params.sigma_pos > 0.0) || !(params.sigma_vel > 0.0) {
            return Err(Error::InvalidParameter("q_c must be >= 0 and sensor sigmas > 0".into()));
        }
        let a_j = DMatrix::from_row_slice(2, 2, &[1.0, ts, 0.0, 1.0]);
        let b_j = DMatrix::from_column_slice(2, 1, &[ts * ts / 2.0, ts]);
        let q_j = q_base(ts) * params.q_c;
        let r_j = DMatrix::from_diagonal(&DVector::from_vec(vec![
            params.sigma_pos.powi(2),
            params.sigma_vel.powi(2),
        ]));
        let u_max = DVector::from_vec(params.u_max.clone());
        let model = Self {
            n,
            ts,
            a: block_diag(&vec![a_j; n]),
            b: block_diag(&vec![b_j; n]),
            c: DMatrix::identity(2 * n, 2 * n),
            q: block_diag(&vec![q_j; n]),
            r: block_diag(&vec![r_j; n]),
            u_min: -&u_max,
            u_max,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let s = 2 * self.n;
        let shapes_ok = self.a.shape() == (s, s)
            && self.b.shape() == (s, self.n)
            && self.c.ncols() == s
            && self.q.shape() == (s, s)
            && self.r.shape() == (self.c.nrows(), self.c.nrows())
            && self.u_min.len() == self.n
            && self.u_max.len() == self.n;
        if !shapes_ok {
            return Err(Error::InvalidParameter("plant matrix shapes".into()));
        }
        cholesky(&self.r, "R")?;
        let min_eig = crate::linalg::symmetrize(&self.q).symmetric_eigenvalues().min();
        if min_eig < -1e-15 * self.q.norm().max(1.0) {
            return Err(Error::InvalidParameter("Q is not positive semidefinite".into()));
        }
        for j in 0..self.n {
            if !(self.u_min[j] < 0.0 && 0.0 < self.u_max[j]) {
                return Err(Error::InvalidParameter(format!(
                    "limits at joint {j} must satisfy u_min < 0 < u_max"
                )));
            }
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        2 * self.n
    }

    pub fn meas_dim(&self) -> usize {
        self.c.nrows()
    }
}

/// `[[Ts³/3, Ts²/2], [Ts²/2, Ts]]`
pub fn q_base(ts: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[ts.powi(3) / 3.0, ts.powi(2) / 2.0, ts.powi(2) / 2.0, ts])
}

pub fn saturate(u: &DVector<f64>, u_min: &DVector<f64>, u_max: &DVector<f64>) -> Result<DVector<f64>> {
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("saturate input"));
    }
    Ok(DVector::from_iterator(
        u.len(),
        u.iter()
            .zip(u_min.iter().zip(u_max.iter()))
            .map(|(v, (lo, hi))| v.clamp(*lo, *hi)),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub x: DVector<f64>,
}

impl PlantState {
    pub fn new(x: DVector<f64>) -> Self {
        Self { x }
    }

    pub fn at_rest(q: &DVector<f64>) -> Self {
        Self {
            x: interleave(q, &DVector::zeros(q.len())),
        }
    }

    pub fn q(&self) -> DVector<f64> {
        positions(&self.x)
    }

    pub fn qd(&self) -> DVector<f64> {
        velocities(&self.x)
    }
}

/// `x' = A x + B Sat{u} + w`; `w = None` gives the noise-free map.
pub fn plant_step(
    state: &PlantState,
    u: &DVector<f64>,
    model: &PlantModel,
    w: Option<&DVector<f64>>,
) -> Result<PlantState> {
    let u_sat = saturate(u, &model.u_min, &model.u_max)?;
    let mut x = &model.a * &state.x + &model.b * u_sat;
    if let Some(w) = w {
        x += w;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("plant state"));
    }
    Ok(PlantState { x })
}

/// `ỹ = C x + v + a`; `v = None` gives the noise-free output.
pub fn measure(
    state: &PlantState,
    attack: &DVector<f64>,
    model: &PlantModel,
    v: Option<&DVector<f64>>,
) -> Result<DVector<f64>> {
    if attack.iter().any(|a| !a.is_finite()) {
        return Err(Error::NonFinite("attack vector"));
    }
    let mut y = &model.c * &state.x + attack;
    if let Some(v) = v {
        y += v;
    }
    Ok(y)
}

/// Seedable source of process and sensor noise. Each simulation run owns one.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    pub seed: u64,
    rng: ChaCha20Rng,
    q_sqrt: DMatrix<f64>,
    r_sqrt: DMatrix<f64>,
}

impl NoiseSource {
    pub fn new(model: &PlantModel, seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha20Rng::seed_from_u64(seed),
            q_sqrt: psd_sqrt(&model.q),
            r_sqrt: psd_sqrt(&model.r),
        }
    }

    pub fn standard_normal(&mut self, dim: usize) -> DVector<f64> {
        DVector::from_iterator(dim, (0..dim).map(|_| StandardNormal.sample(&mut self.rng)))
    }

    /// Sample from `N(0, S Sᵀ)` for a given square-root factor.
    pub fn gaussian(&mut self, sqrt: &DMatrix<f64>) -> DVector<f64> {
        let e = self.standard_normal(sqrt.ncols());
        sqrt * e
    }

    pub fn process(&mut self) -> DVector<f64> {
        let e = self.standard_normal(self.q_sqrt.ncols());
        &self.q_sqrt * e
    }

    pub fn measurement(&mut self) -> DVector<f64> {
        let e = self.standard_normal(self.r_sqrt.ncols());
        &self.r_sqrt * e
    }

    /// One step's draws in the fixed order `w` then `v`.
    pub fn step_draws(&mut self) -> (DVector<f64>, DVector<f64>) {
        let w = self.process();
        let v = self.measurement();
        (w, v)
    }
}
