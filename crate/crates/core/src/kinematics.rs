//! Serial-chain geometry: forward kinematics, geometric Jacobian in the base
//! frame, its time derivative, and the directional manipulability cost used
//! by the manipulability-reduction defense.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Finite-difference step sizes, all in joint units (rad).
pub mod fd {
    /// Central difference of `J` along `q̇` for `J̇`.
    pub const JDOT_STEP: f64 = 1e-6;
    /// Central difference of `J_p` per joint for `∂M/∂q_j`.
    pub const MANIP_STEP: f64 = 1e-6;
    /// Central difference of the cost gradient for the Hessian.
    pub const HESSIAN_STEP: f64 = 1e-4;
}

/// Classical Denavit–Hartenberg row: `T = Rz(θ + offset) Tz(d) Tx(a) Rx(α)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DhRow {
    pub a: f64,
    pub alpha: f64,
    pub d: f64,
    pub theta_offset: f64,
}

impl DhRow {
    pub fn transform(&self, q: f64) -> Matrix4<f64> {
        let (st, ct) = (q + self.theta_offset).sin_cos();
        let (sa, ca) = self.alpha.sin_cos();
        Matrix4::new(
            ct,
            -st * ca,
            st * sa,
            self.a * ct, //
            st,
            ct * ca,
            -ct * sa,
            self.a * st, //
            0.0,
            sa,
            ca,
            self.d, //
            0.0,
            0.0,
            0.0,
            1.0,
        )
    }
}

/// On-disk chain description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    /// Rows of `[a, alpha, d, theta_offset]`.
    pub dh: Vec<[f64; 4]>,
    #[serde(default)]
    pub base_translation: [f64; 3],
    /// Roll-pitch-yaw of the base frame (rad).
    #[serde(default)]
    pub base_rpy: [f64; 3],
}

impl Default for ChainConfig {
    /// Gen3-like 7-DOF geometry (link offsets in metres).
    fn default() -> Self {
        use std::f64::consts::{FRAC_PI_2, PI};
        Self {
            dh: vec![
                [0.0, FRAC_PI_2, -(0.1564 + 0.1284), 0.0],
                [0.0, FRAC_PI_2, -(0.0054 + 0.0064), PI],
                [0.0, FRAC_PI_2, -(0.2104 + 0.2104), PI],
                [0.0, FRAC_PI_2, -(0.0064 + 0.0064), PI],
                [0.0, FRAC_PI_2, -(0.2084 + 0.1059), PI],
                [0.0, FRAC_PI_2, 0.0, PI],
                [0.0, PI, -(0.1059 + 0.0615), PI],
            ],
            base_translation: [0.0; 3],
            base_rpy: [PI, 0.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KinematicChain {
    pub rows: Vec<DhRow>,
    pub base: Matrix4<f64>,
}

impl KinematicChain {
    pub fn from_config(cfg: &ChainConfig) -> Result<Self> {
        if cfg.dh.is_empty() {
            return Err(Error::InvalidParameter("chain has no DH rows".into()));
        }
        let finite = cfg
            .dh
            .iter()
            .flatten()
            .chain(&cfg.base_translation)
            .chain(&cfg.base_rpy);
        if finite.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("chain parameters"));
        }
        let rows = cfg
            .dh
            .iter()
            .map(|r| DhRow {
                a: r[0],
                alpha: r[1],
                d: r[2],
                theta_offset: r[3],
            })
            .collect();
        let [roll, pitch, yaw] = cfg.base_rpy;
        let rot = Rotation3::from_euler_angles(roll, pitch, yaw);
        let mut base = Matrix4::identity();
        base.fixed_view_mut::<3, 3>(0, 0).copy_from(rot.matrix());
        base.fixed_view_mut::<3, 1>(0, 3)
            .copy_from(&Vector3::from(cfg.base_translation));
        Ok(Self { rows, base })
    }

    pub fn gen3() -> Self {
        Self::from_config(&ChainConfig::default()).expect("default chain is valid")
    }

    pub fn dof(&self) -> usize {
        self.rows.len()
    }

    /// Base-frame transforms of frames `0..=dof` (frame 0 is the base).
    fn frames(&self, q: &DVector<f64>) -> Vec<Matrix4<f64>> {
        let mut out = Vec::with_capacity(self.dof() + 1);
        let mut t = self.base;
        out.push(t);
        for (row, qi) in self.rows.iter().zip(q.iter()) {
            t *= row.transform(*qi);
            out.push(t);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandPose {
    pub p: Vector3<f64>,
    pub rot: Matrix3<f64>,
}

fn translation(t: &Matrix4<f64>) -> Vector3<f64> {
    t.fixed_view::<3, 1>(0, 3).into_owned()
}

fn z_axis(t: &Matrix4<f64>) -> Vector3<f64> {
    t.fixed_view::<3, 1>(0, 2).into_owned()
}

pub fn forward_kinematics(chain: &KinematicChain, q: &DVector<f64>) -> HandPose {
    let t = chain.frames(q).pop().expect("at least the base frame");
    HandPose {
        p: translation(&t),
        rot: t.fixed_view::<3, 3>(0, 0).into_owned(),
    }
}

/// 6×n geometric Jacobian; rows 0..3 map to linear velocity, 3..6 to
/// angular velocity, both in the base frame.
pub fn geometric_jacobian(chain: &KinematicChain, q: &DVector<f64>) -> DMatrix<f64> {
    let frames = chain.frames(q);
    let p_e = translation(frames.last().expect("frames"));
    let n = chain.dof();
    let mut j = DMatrix::zeros(6, n);
    for (i, frame) in frames.iter().take(n).enumerate() {
        let z = z_axis(frame);
        let lin = z.cross(&(p_e - translation(frame)));
        j.fixed_view_mut::<3, 1>(0, i).copy_from(&lin);
        j.fixed_view_mut::<3, 1>(3, i).copy_from(&z);
    }
    j
}

pub fn position_jacobian(chain: &KinematicChain, q: &DVector<f64>) -> DMatrix<f64> {
    position_jacobian_of(&geometric_jacobian(chain, q))
}

fn position_jacobian_of(j: &DMatrix<f64>) -> DMatrix<f64> {
    j.rows(0, 3).into_owned()
}

/// `J̇ ≈ (J(q + q̇h) − J(q − q̇h)) / 2h`.
pub fn jacobian_time_derivative(chain: &KinematicChain, q: &DVector<f64>, qdot: &DVector<f64>) -> DMatrix<f64> {
    if qdot.iter().all(|v| *v == 0.0) {
        return DMatrix::zeros(6, chain.dof());
    }
    let h = fd::JDOT_STEP;
    let plus = geometric_jacobian(chain, &(q + qdot * h));
    let minus = geometric_jacobian(chain, &(q - qdot * h));
    (plus - minus) / (2.0 * h)
}

/// `w = dᵀ J_p J_pᵀ d`.
pub fn directional_manipulability(chain: &KinematicChain, q: &DVector<f64>, d: &Vector3<f64>) -> f64 {
    manipulability_from_jp(&position_jacobian(chain, q), d)
}

fn manipulability_from_jp(jp: &DMatrix<f64>, d: &Vector3<f64>) -> f64 {
    let dv = DVector::from_column_slice(d.as_slice());
    (jp.transpose() * dv).norm_squared()
}

/// Manipulability cost `C = ½ w²` with `d` frozen.
pub fn manip_cost(chain: &KinematicChain, q: &DVector<f64>, d: &Vector3<f64>) -> f64 {
    0.5 * directional_manipulability(chain, q, d).powi(2)
}

/// `∇C = w · [dᵀ ∂M/∂q_j d]_j` with `∂J_p/∂q_j` from central differences.
pub fn manip_cost_gradient(chain: &KinematicChain, q: &DVector<f64>, d: &Vector3<f64>) -> DVector<f64> {
    let n = chain.dof();
    let dv = DVector::from_column_slice(d.as_slice());
    let jp = position_jacobian(chain, q);
    let jtd = jp.transpose() * &dv;
    let w = jtd.norm_squared();
    let h = fd::MANIP_STEP;
    let mut grad = DVector::zeros(n);
    if w == 0.0 {
        return grad;
    }
    for j in 0..n {
        let mut qp = q.clone();
        let mut qm = q.clone();
        qp[j] += h;
        qm[j] -= h;
        let djp = (position_jacobian(chain, &qp) - position_jacobian(chain, &qm)) / (2.0 * h);
        // dᵀ (dJ Jᵀ + J dJᵀ) d = 2 (Jᵀd)·(dJᵀd)
        let dw = 2.0 * jtd.dot(&(djp.transpose() * &dv));
        grad[j] = w * dw;
    }
    grad
}

/// Symmetrized central-difference Hessian of `C` (`d` frozen).
pub fn manip_cost_hessian(chain: &KinematicChain, q: &DVector<f64>, d: &Vector3<f64>) -> DMatrix<f64> {
    let n = chain.dof();
    let h = fd::HESSIAN_STEP;
    let mut hess = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut qp = q.clone();
        let mut qm = q.clone();
        qp[j] += h;
        qm[j] -= h;
        let col = (manip_cost_gradient(chain, &qp, d) - manip_cost_gradient(chain, &qm, d)) / (2.0 * h);
        hess.set_column(j, &col);
    }
    (&hess + hess.transpose()) * 0.5
}

/// Orientation error `sin(θ/2) r̂` of `R_ref R̂ᵀ`, with `θ ∈ [0, π]`.
///
/// Equal to the vector part of the relative unit quaternion taken with a
/// non-negative scalar part; the quaternion extraction pivots on the largest
/// diagonal element so both `θ → 0` and `θ → π` are regular.
pub fn orientation_error(r_ref: &Matrix3<f64>, r_hat: &Matrix3<f64>) -> Vector3<f64> {
    let rel = r_ref * r_hat.transpose();
    let quat = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(rel));
    let v = quat.imag();
    if quat.w < 0.0 {
        -v
    } else {
        v
    }
}

/// Nearest rotation matrix (polar factor), for trajectory bookkeeping.
pub fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let (u, vt) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let mut out = u * vt;
    if out.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        out = u * vt;
    }
    out
}
