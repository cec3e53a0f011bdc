//! Optimal stealthy sensor-injection attack: closed-loop rollouts,
//! central-difference sensitivity, PD attack reference and QCQP synthesis.

use nalgebra::{DMatrix, DVector, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::EstimatorGains;
use crate::linalg::inv_quad_form;
use crate::plant::{pos_index, positions, vel_index};
use crate::qcqp::{self, QcqpProblem};
use crate::scenario::world::World;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackerConfig {
    /// Diagonal of `K_p^A`.
    pub kp: f64,
    /// Diagonal of `K_d^A`.
    pub kd: f64,
    pub zeta: f64,
    pub fd_step_q: f64,
    pub fd_step_qd: f64,
    /// Step-halving check of the sensitivity at the first attacked step.
    pub richardson_check: bool,
    pub qcqp_tol: f64,
    /// Relative margin below the detector threshold the attack aims for.
    pub stealth_margin: f64,
}

impl Default for AttackerConfig {
    fn default() -> Self {
        Self {
            kp: 4.0,
            kd: 4.0,
            zeta: 1e-2,
            fd_step_q: 1e-6,
            fd_step_qd: 1e-5,
            richardson_check: true,
            qcqp_tol: qcqp::DEFAULT_TOL,
            stealth_margin: 1e-6,
        }
    }
}

impl AttackerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.zeta > 0.0 && self.fd_step_q > 0.0 && self.fd_step_qd > 0.0 && self.qcqp_tol > 0.0) {
            return Err(Error::InvalidParameter(
                "zeta, fd steps and qcqp_tol must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.stealth_margin) {
            return Err(Error::InvalidParameter("stealth_margin must lie in [0,1)".into()));
        }
        if !(self.kp.is_finite() && self.kd.is_finite()) {
            return Err(Error::NonFinite("attacker PD gains"));
        }
        Ok(())
    }
}

/// `M`: joint increment to full sensor vector (position slot 1, velocity slot 1/Ts).
pub fn m_matrix(n: usize, ts: f64) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(2 * n, n);
    for j in 0..n {
        m[(pos_index(j), j)] = 1.0;
        m[(vel_index(j), j)] = 1.0 / ts;
    }
    m
}

/// `[ (a)_q ; 0 ]`
pub fn baseline(a: &DVector<f64>) -> DVector<f64> {
    let mut b = DVector::zeros(a.len());
    for j in 0..a.len() / 2 {
        b[pos_index(j)] = a[pos_index(j)];
    }
    b
}

/// Advance a copy of `snap` noise-free under `attacks`, one tick each. The
/// first tick consumes the measurement already observed by `snap`.
pub fn rollout(snap: &World, attacks: &[DVector<f64>]) -> Result<World> {
    let mut w = snap.clone();
    for (i, a) in attacks.iter().enumerate() {
        if i > 0 || w.pending_measurement().is_none() {
            w.observe(None)?;
        }
        w.advance(a, None)?;
    }
    Ok(w)
}

/// Hand acceleration two ticks ahead under `[a, 0]`.
pub fn predicted_acceleration(snap: &World, a: &DVector<f64>) -> Result<Vector3<f64>> {
    let zero = DVector::zeros(a.len());
    Ok(rollout(snap, &[a.clone(), zero])?.hand_state().acc)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sensitivity {
    /// 3×p
    pub z: DMatrix<f64>,
    /// 3×n
    pub g: DMatrix<f64>,
}

/// Central differences of the predicted hand acceleration with respect to
/// each sensor channel of the attack, at `a_bar`.
pub fn sensitivity(snap: &World, a_bar: &DVector<f64>, cfg: &AttackerConfig, scale: f64) -> Result<Sensitivity> {
    let p = a_bar.len();
    let n = p / 2;
    let columns: Vec<Result<Vector3<f64>>> = (0..p)
        .into_par_iter()
        .map(|i| {
            let h = scale * if i % 2 == 0 { cfg.fd_step_q } else { cfg.fd_step_qd };
            let mut plus = a_bar.clone();
            plus[i] += h;
            let mut minus = a_bar.clone();
            minus[i] -= h;
            let ap = predicted_acceleration(snap, &plus)?;
            let am = predicted_acceleration(snap, &minus)?;
            Ok((ap - am) / (2.0 * h))
        })
        .collect();
    let mut z = DMatrix::zeros(3, p);
    for (i, c) in columns.into_iter().enumerate() {
        z.set_column(i, &c?);
    }
    let g = &z * m_matrix(n, snap.setup().model.ts);
    Ok(Sensitivity { z, g })
}

/// Relative Frobenius change of `Z` when the difference steps are halved.
pub fn richardson_gap(snap: &World, a_bar: &DVector<f64>, cfg: &AttackerConfig) -> Result<f64> {
    let full = sensitivity(snap, a_bar, cfg, 1.0)?.z;
    let half = sensitivity(snap, a_bar, cfg, 0.5)?.z;
    Ok((&full - &half).norm() / half.norm().max(f64::MIN_POSITIVE))
}

/// `K_p^A (p̄^A − p^SIM) + K_d^A (ṗ̄^A − ṗ^SIM)`
pub fn attacker_reference(
    p_ref: &Vector3<f64>,
    v_ref: &Vector3<f64>,
    p_sim: &Vector3<f64>,
    v_sim: &Vector3<f64>,
    cfg: &AttackerConfig,
) -> Vector3<f64> {
    (p_ref - p_sim) * cfg.kp + (v_ref - v_sim) * cfg.kd
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackStep {
    pub attack: DVector<f64>,
    pub delta: DVector<f64>,
    pub lambda: f64,
    pub active: bool,
    /// The stealth set was empty; the constraint minimizer was used instead.
    pub fallback: bool,
    /// `(MΔ + c)ᵀ Σ⁻¹ (MΔ + c)`, the residual statistic the attack produces.
    pub modeled_z: f64,
    pub target_acc: Vector3<f64>,
    pub predicted_acc: Vector3<f64>,
    pub sensitivity: Sensitivity,
}

/// Assemble the stealth-constrained QCQP for the increment.
#[allow(clippy::too_many_arguments)]
pub fn build_problem(
    sens: &Sensitivity,
    target_acc: &Vector3<f64>,
    base_acc: &Vector3<f64>,
    c: &DVector<f64>,
    gains: &EstimatorGains,
    tau: f64,
    zeta: f64,
    ts: f64,
) -> QcqpProblem {
    let n = sens.g.ncols();
    let m = m_matrix(n, ts);
    let sinv_m = gains.sigma_chol.solve(&m);
    let sinv_c = gains.sigma_chol.solve(c);
    let err = DVector::from_column_slice((target_acc - base_acc).as_slice());
    QcqpProblem {
        h: sens.g.transpose() * &sens.g + DMatrix::identity(n, n) * zeta,
        g: -(sens.g.transpose() * err),
        qc: crate::linalg::symmetrize(&(m.transpose() * &sinv_m)),
        q_lin: m.transpose() * sinv_c * 2.0,
        c0: c.dot(&gains.sigma_chol.solve(c)) - tau,
    }
}

/// One attack increment from the live world, which must already hold the
/// realized measurement `y_k`.
pub fn synthesize_step(snap: &World, cfg: &AttackerConfig, gains: &EstimatorGains, tau: f64) -> Result<AttackStep> {
    let setup = snap.setup();
    let task = setup
        .attacker_task
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("scenario has no attacker task".into()))?;
    let y = snap
        .pending_measurement()
        .ok_or_else(|| Error::InvalidParameter("attacker needs the current measurement".into()))?
        .clone();
    let model = &setup.model;
    let p = model.meas_dim();
    let a_bar = baseline(snap.last_attack());

    let one = rollout(snap, std::slice::from_ref(&a_bar))?;
    let h1 = one.hand_state();
    let two = rollout(&one, &[DVector::zeros(p)])?;
    let base_acc = two.hand_state().acc;

    let r = task.reference((snap.k + 1) as f64 * model.ts);
    let target = attacker_reference(&r.p, &r.pd, &h1.p, &h1.vel, cfg);
    let sens = sensitivity(snap, &a_bar, cfg, 1.0)?;

    let c = &y + &a_bar - &model.c * &snap.est.x_hat;
    let budget = tau * (1.0 - cfg.stealth_margin);
    let prob = build_problem(&sens, &target, &base_acc, &c, gains, budget, cfg.zeta, model.ts);
    let (delta, lambda, active, fallback) = match qcqp::solve(&prob, cfg.qcqp_tol) {
        Ok(s) => (s.delta, s.lambda, s.active, false),
        Err(Error::Infeasible { min_constraint }) => {
            log::warn!(
                "step {}: stealth set empty (min constraint {min_constraint:e}); using constraint minimizer",
                snap.k
            );
            (prob.constraint_minimizer(), f64::NAN, true, true)
        }
        Err(e) => return Err(e),
    };
    let m = m_matrix(model.n, model.ts);
    let m_delta = &m * &delta;
    let attack = &a_bar + &m_delta;
    let modeled_z = inv_quad_form(&gains.sigma_chol, &(&m_delta + &c));
    let predicted_acc = base_acc + &sens.g * &delta;
    Ok(AttackStep {
        attack,
        delta,
        lambda,
        active,
        fallback,
        modeled_z,
        target_acc: target,
        predicted_acc: Vector3::new(predicted_acc[0], predicted_acc[1], predicted_acc[2]),
        sensitivity: sens,
    })
}

/// `(a)_q̇ − Δ/Ts` residual of the incremental structure.
pub fn incremental_defect(prev: &DVector<f64>, next: &DVector<f64>, ts: f64) -> f64 {
    let dq = positions(next) - positions(prev);
    (crate::plant::velocities(next) - dq / ts).amax()
}
