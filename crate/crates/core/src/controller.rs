//! Task-space PD+feedforward control with redundancy resolution.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{orientation_error, HandPose};
use crate::linalg::{pinv_full_row_rank, solve_riccati};

/// Smallest singular value accepted for the task Jacobian.
pub const RANK_FLOOR: f64 = 1e-6;

/// Per-axis LQR weights for the double integrator `[e, ė]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LqrWeights {
    pub q_pos: f64,
    pub q_vel: f64,
    pub r: f64,
}

impl Default for LqrWeights {
    fn default() -> Self {
        Self {
            q_pos: 100.0,
            q_vel: 10.0,
            r: 1.0,
        }
    }
}

/// Discrete LQR for one axis of `ë = u` sampled at `ts`. Returns `(kp, kd)`
/// such that `u = -kp e - kd ė`.
pub fn lqr_gains(ts: f64, q_pos: f64, q_vel: f64, r_weight: f64) -> Result<(f64, f64)> {
    if !(q_pos > 0.0 && q_vel > 0.0 && r_weight > 0.0 && ts > 0.0) {
        return Err(Error::InvalidParameter("LQR weights and ts must be positive".into()));
    }
    let a = DMatrix::from_row_slice(2, 2, &[1.0, ts, 0.0, 1.0]);
    let b = DMatrix::from_column_slice(2, 1, &[ts * ts / 2.0, ts]);
    let q = DMatrix::from_diagonal(&DVector::from_vec(vec![q_pos, q_vel]));
    let r = DMatrix::from_element(1, 1, r_weight);
    // control DARE is the filter DARE of the dual pair (Aᵀ, Bᵀ)
    let x = solve_riccati(&a.transpose(), &b.transpose(), &q, &r)?;
    let denom = r_weight + (b.transpose() * &x * &b)[(0, 0)];
    let k = (b.transpose() * &x * &a) / denom;
    Ok((k[(0, 0)], k[(0, 1)]))
}

/// Spectral radius of the closed-loop axis `A − B [kp kd]`.
pub fn closed_loop_radius(ts: f64, kp: f64, kd: f64) -> f64 {
    let a = DMatrix::from_row_slice(
        2,
        2,
        &[
            1.0 - kp * ts * ts / 2.0,
            ts - kd * ts * ts / 2.0,
            -kp * ts,
            1.0 - kd * ts,
        ],
    );
    crate::linalg::spectral_radius(&a)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerGains {
    pub kpp: Matrix3<f64>,
    pub kdp: Matrix3<f64>,
    pub kpo: Matrix3<f64>,
    pub kdo: Matrix3<f64>,
    /// Null-space damping.
    pub c_w: f64,
}

impl ControllerGains {
    pub fn from_lqr(ts: f64, weights: &LqrWeights, c_w: f64) -> Result<Self> {
        let (kp, kd) = lqr_gains(ts, weights.q_pos, weights.q_vel, weights.r)?;
        if !(c_w > 0.0) {
            return Err(Error::InvalidParameter("c_w must be positive".into()));
        }
        Ok(Self {
            kpp: Matrix3::from_diagonal_element(kp),
            kdp: Matrix3::from_diagonal_element(kd),
            kpo: Matrix3::from_diagonal_element(kp),
            kdo: Matrix3::from_diagonal_element(kd),
            c_w,
        })
    }
}

/// One sample of the hand reference.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskReference {
    pub p: Vector3<f64>,
    pub pd: Vector3<f64>,
    pub pdd: Vector3<f64>,
    pub rot: Matrix3<f64>,
    pub omega: Vector3<f64>,
    pub omegad: Vector3<f64>,
    pub orientation_tracked: bool,
}

impl TaskReference {
    pub fn rows(&self) -> usize {
        if self.orientation_tracked {
            6
        } else {
            3
        }
    }
}

/// PD+feedforward task acceleration (3 rows, or 6 with orientation).
/// `est_twist` is `[ṗ; ω]` of the estimated hand.
pub fn task_pd(
    reference: &TaskReference,
    est_pose: &HandPose,
    est_twist: &DVector<f64>,
    gains: &ControllerGains,
) -> DVector<f64> {
    let p_dot = Vector3::new(est_twist[0], est_twist[1], est_twist[2]);
    let lin = reference.pdd + gains.kpp * (reference.p - est_pose.p) + gains.kdp * (reference.pd - p_dot);
    if !reference.orientation_tracked {
        return DVector::from_column_slice(lin.as_slice());
    }
    let omega = Vector3::new(est_twist[3], est_twist[4], est_twist[5]);
    let e_o = orientation_error(&reference.rot, &est_pose.rot);
    let ang = reference.omegad + gains.kpo * e_o + gains.kdo * (reference.omega - omega);
    DVector::from_iterator(6, lin.iter().chain(ang.iter()).copied())
}

/// Task Jacobian restricted to the tracked rows, with its Moore–Penrose
/// pseudoinverse.
#[derive(Debug, Clone)]
pub struct TaskJacobian {
    pub j: DMatrix<f64>,
    pub pinv: DMatrix<f64>,
    pub sigma_min: f64,
}

impl TaskJacobian {
    pub fn new(full: &DMatrix<f64>, rows: usize) -> Result<Self> {
        let j = full.rows(0, rows).into_owned();
        let (pinv, sigma_min) = pinv_full_row_rank(&j, RANK_FLOOR)?;
        Ok(Self { j, pinv, sigma_min })
    }

    /// `I − J†J`
    pub fn null_projector(&self) -> DMatrix<f64> {
        let n = self.j.ncols();
        DMatrix::identity(n, n) - &self.pinv * &self.j
    }
}

/// `u_nom = J★(u_PD − J̇q̇) − c_w (I − J†J) q̇ + u_sec`.
pub fn resolve_redundancy(
    u_pd: &DVector<f64>,
    jdot_qdot: &DVector<f64>,
    qdot: &DVector<f64>,
    j_star: &DMatrix<f64>,
    task: &TaskJacobian,
    u_sec: &DVector<f64>,
    c_w: f64,
) -> Result<DVector<f64>> {
    let residual = (&task.j * u_sec).norm();
    if residual > 1e-8 * u_sec.norm() + 1e-12 {
        return Err(Error::NotInNullSpace { residual });
    }
    let null_damping = task.null_projector() * qdot * c_w;
    Ok(j_star * (u_pd - jdot_qdot) - null_damping + u_sec)
}

/// Scale the primary command into `(1 − quota)` of the symmetric capability
/// and the secondary command into the headroom left over. Each part keeps
/// its direction.
pub fn hierarchical_scale(
    u_primary: &DVector<f64>,
    u_secondary: &DVector<f64>,
    u_min: &DVector<f64>,
    u_max: &DVector<f64>,
    quota: f64,
) -> DVector<f64> {
    let n = u_primary.len();
    let mut s1: f64 = 1.0;
    for j in 0..n {
        let cap = (1.0 - quota) * u_min[j].abs().min(u_max[j]);
        let mag = u_primary[j].abs();
        if mag > cap {
            s1 = s1.min(cap / mag);
        }
    }
    let primary = u_primary * s1;
    let mut s2: f64 = 1.0;
    for j in 0..n {
        let v = u_secondary[j];
        let room = if v > 0.0 {
            u_max[j] - primary[j]
        } else {
            primary[j] - u_min[j]
        };
        if v != 0.0 && v.abs() > room {
            s2 = s2.min(room.max(0.0) / v.abs());
        }
    }
    primary + u_secondary * s2
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{geometric_jacobian, KinematicChain};

    #[test]
    fn lqr_default_weights_are_stable() {
        let (kp, kd) = lqr_gains(0.01, 100.0, 10.0, 1.0).unwrap();
        assert!(kp > 0.0 && kd > 0.0);
        assert!(closed_loop_radius(0.01, kp, kd) < 1.0);
    }

    #[test]
    fn lqr_matches_backward_value_iteration() {
        // scalar-arithmetic finite-horizon recursion run to convergence
        let (ts, qp, qv, r): (f64, f64, f64, f64) = (0.01, 100.0, 10.0, 1.0);
        let (a12, b1, b2) = (ts, ts * ts / 2.0, ts);
        let (mut x11, mut x12, mut x22): (f64, f64, f64) = (qp, 0.0, qv);
        let (mut k1, mut k2) = (0.0, 0.0);
        for _ in 0..2_000_000 {
            // BᵀX, BᵀXB, BᵀXA
            let bx1 = b1 * x11 + b2 * x12;
            let bx2 = b1 * x12 + b2 * x22;
            let bxb = bx1 * b1 + bx2 * b2;
            let (bxa1, bxa2) = (bx1, bx1 * a12 + bx2);
            let (n1, n2) = (bxa1 / (r + bxb), bxa2 / (r + bxb));
            // AᵀXA
            let axa11 = x11;
            let axa12 = x11 * a12 + x12;
            let axa22 = a12 * a12 * x11 + 2.0 * a12 * x12 + x22;
            let nx11 = qp + axa11 - bxa1 * n1;
            let nx12 = axa12 - bxa1 * n2;
            let nx22 = qv + axa22 - bxa2 * n2;
            let done = (nx11 - x11).abs() + (nx12 - x12).abs() + (nx22 - x22).abs() < 1e-10;
            x11 = nx11;
            x12 = nx12;
            x22 = nx22;
            k1 = n1;
            k2 = n2;
            if done {
                break;
            }
        }
        let (kp, kd) = lqr_gains(ts, qp, qv, r).unwrap();
        assert!(
            (kp - k1).abs() < 1e-6 * k1 && (kd - k2).abs() < 1e-6 * k2,
            "{kp} {kd} {k1} {k2}"
        );
    }

    #[test]
    fn lqr_gain_grows_with_state_weight() {
        let (kp1, _) = lqr_gains(0.01, 100.0, 10.0, 1.0).unwrap();
        let (kp2, _) = lqr_gains(0.01, 200.0, 20.0, 1.0).unwrap();
        assert!(kp2 > kp1);
        assert!(lqr_gains(0.01, -1.0, 1.0, 1.0).is_err());
    }

    fn still_ref(p: Vector3<f64>, tracked: bool) -> TaskReference {
        TaskReference {
            p,
            pd: Vector3::zeros(),
            pdd: Vector3::zeros(),
            rot: Matrix3::identity(),
            omega: Vector3::zeros(),
            omegad: Vector3::zeros(),
            orientation_tracked: tracked,
        }
    }

    #[test]
    fn task_pd_examples() {
        let gains = ControllerGains::from_lqr(0.01, &LqrWeights::default(), 1.0).unwrap();
        let pose = HandPose {
            p: Vector3::new(0.1, 0.2, 0.3),
            rot: Matrix3::identity(),
        };
        let u = task_pd(&still_ref(pose.p, true), &pose, &DVector::zeros(6), &gains);
        assert_eq!(u, DVector::zeros(6));

        let unit = ControllerGains {
            kpp: Matrix3::identity(),
            kdp: Matrix3::zeros(),
            kpo: Matrix3::zeros(),
            kdo: Matrix3::zeros(),
            c_w: 1.0,
        };
        let delta = 0.05;
        let r = still_ref(pose.p + Vector3::x() * delta, false);
        let u = task_pd(&r, &pose, &DVector::zeros(6), &unit);
        assert_eq!(u.len(), 3);
        assert!((u - DVector::from_vec(vec![delta, 0.0, 0.0])).norm() < 1e-15);
    }

    fn sample_task() -> TaskJacobian {
        let chain = KinematicChain::gen3();
        let q = DVector::from_vec(crate::config::ScenarioSettings::default().q_init);
        TaskJacobian::new(&geometric_jacobian(&chain, &q), 3).unwrap()
    }

    #[test]
    fn redundancy_range_consistency() {
        let task = sample_task();
        let a = DVector::from_vec(vec![0.3, -0.1, 0.7, 0.2, 0.0, -0.4, 0.1]);
        let u_pd = &task.j * &a;
        let zero7 = DVector::zeros(7);
        let u = resolve_redundancy(&u_pd, &DVector::zeros(3), &zero7, &task.pinv, &task, &zero7, 1.0).unwrap();
        assert!((&task.j * u - u_pd).norm() < 1e-12);
    }

    #[test]
    fn redundancy_null_damping_isolated() {
        let task = sample_task();
        let v = DVector::from_vec(vec![0.5, 0.1, -0.3, 0.2, 0.9, -0.1, 0.4]);
        let qdot = task.null_projector() * v;
        let zero7 = DVector::zeros(7);
        let u = resolve_redundancy(
            &DVector::zeros(3),
            &DVector::zeros(3),
            &qdot,
            &task.pinv,
            &task,
            &zero7,
            2.0,
        )
        .unwrap();
        assert!((&u + &qdot * 2.0).norm() < 1e-12);
        assert!((&task.j * &u).norm() < 1e-9);
    }

    #[test]
    fn redundancy_matches_svd_least_squares() {
        let task = sample_task();
        let u_pd = DVector::from_vec(vec![0.2, -0.4, 0.1]);
        let jdq = DVector::from_vec(vec![0.01, 0.02, -0.03]);
        let qdot = DVector::from_vec(vec![0.1, -0.2, 0.05, 0.3, -0.1, 0.2, 0.0]);
        let u_sec = task.null_projector() * DVector::from_element(7, 0.1);
        let c_w = 1.0;
        let u = resolve_redundancy(&u_pd, &jdq, &qdot, &task.pinv, &task, &u_sec, c_w).unwrap();
        // oracle: minimum-norm least squares via SVD, null projector via SVD basis
        let svd = task.j.clone().svd(true, true);
        let ls = svd.solve(&(&u_pd - &jdq), 1e-12).unwrap();
        let vt = svd.v_t.unwrap();
        let range = vt.transpose() * &vt;
        let null_part = (DMatrix::identity(7, 7) - range) * &qdot * c_w;
        let oracle = ls - null_part + &u_sec;
        assert!((u - oracle).norm() < 1e-9);
    }

    #[test]
    fn redundancy_rejects_bad_secondary_and_rank_loss() {
        let task = sample_task();
        let zero7 = DVector::zeros(7);
        let bad = DVector::from_element(7, 1.0);
        let err = resolve_redundancy(
            &DVector::zeros(3),
            &DVector::zeros(3),
            &zero7,
            &task.pinv,
            &task,
            &bad,
            1.0,
        );
        assert!(matches!(err, Err(Error::NotInNullSpace { .. })));
        let chain = KinematicChain::gen3();
        let j = geometric_jacobian(&chain, &DVector::zeros(7));
        assert!(matches!(TaskJacobian::new(&j, 6), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn hierarchical_scale_examples() {
        let lim = DVector::from_vec(vec![1.0, 1.0, 1.0, 1.0, 10.0, 10.0, 10.0]);
        let lo = -&lim;
        let z = DVector::zeros(7);
        assert_eq!(hierarchical_scale(&z, &z, &lo, &lim, 0.3), z);
        let inside = &lim * 0.5;
        assert_eq!(hierarchical_scale(&inside, &z, &lo, &lim, 0.3), inside);
        let over = &lim * 1.4;
        let out = hierarchical_scale(&over, &z, &lo, &lim, 0.3);
        assert!((out - &over * 0.5).norm() < 1e-12);
    }
}
