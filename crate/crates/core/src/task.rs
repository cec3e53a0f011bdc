//! Hand reference generators: a fixed pose and an arc about the base origin
//! with a quintic (minimum-jerk) time law.

use nalgebra::{Matrix3, Vector3};

use crate::controller::TaskReference;
use crate::error::{Error, Result};

/// Quintic time law `s(τ) = 10τ³ − 15τ⁴ + 6τ⁵` on `τ ∈ [0,1]` with its first
/// two derivatives in τ.
pub fn quintic(tau: f64) -> (f64, f64, f64) {
    let t = tau.clamp(0.0, 1.0);
    let s = t * t * t * (10.0 - 15.0 * t + 6.0 * t * t);
    let ds = 30.0 * t * t * (1.0 - t) * (1.0 - t);
    let dds = 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t);
    (s, ds, dds)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Task {
    /// Hold position and orientation.
    Still { p: Vector3<f64>, rot: Matrix3<f64> },
    /// Position-only arc in the plane through the origin, `start` and `end`.
    Arc(ArcTask),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArcTask {
    pub start: Vector3<f64>,
    pub end: Vector3<f64>,
    pub duration: f64,
    pub rot: Matrix3<f64>,
    u1: Vector3<f64>,
    u2: Vector3<f64>,
    sweep: f64,
}

impl ArcTask {
    pub fn new(start: Vector3<f64>, end: Vector3<f64>, duration: f64, rot: Matrix3<f64>) -> Result<Self> {
        if !(duration > 0.0) {
            return Err(Error::InvalidParameter("arc duration must be positive".into()));
        }
        let (r0, r1) = (start.norm(), end.norm());
        if r0 < 1e-9 || r1 < 1e-9 {
            return Err(Error::InvalidParameter(
                "arc endpoints must differ from the origin".into(),
            ));
        }
        let u1 = start / r0;
        let e = end / r1;
        let perp = e - u1 * u1.dot(&e);
        if perp.norm() < 1e-9 {
            return Err(Error::InvalidParameter(
                "arc endpoints are collinear with the origin; plane undefined".into(),
            ));
        }
        let u2 = perp.normalize();
        let sweep = e.dot(&u2).atan2(e.dot(&u1));
        Ok(Self {
            start,
            end,
            duration,
            rot,
            u1,
            u2,
            sweep,
        })
    }

    pub fn radius(&self) -> f64 {
        self.start.norm()
    }

    /// Position, velocity and acceleration at time `t` (s).
    pub fn sample(&self, t: f64) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        let tau = t / self.duration;
        let (s, ds_tau, dds_tau) = quintic(tau);
        let (s_dot, s_ddot) = if (0.0..=1.0).contains(&tau) {
            (ds_tau / self.duration, dds_tau / (self.duration * self.duration))
        } else {
            (0.0, 0.0)
        };
        let (r0, r1) = (self.start.norm(), self.end.norm());
        let theta = self.sweep * s;
        let (sn, cs) = theta.sin_cos();
        let e = self.u1 * cs + self.u2 * sn;
        let e_perp = -self.u1 * sn + self.u2 * cs;
        let r = r0 + (r1 - r0) * s;
        let dr = r1 - r0;
        let dp_ds = e * dr + e_perp * (r * self.sweep);
        let d2p_ds2 = e_perp * (2.0 * dr * self.sweep) - e * (r * self.sweep * self.sweep);
        (e * r, dp_ds * s_dot, d2p_ds2 * s_dot * s_dot + dp_ds * s_ddot)
    }
}

impl Task {
    pub fn reference(&self, t: f64) -> TaskReference {
        match self {
            Task::Still { p, rot } => TaskReference {
                p: *p,
                pd: Vector3::zeros(),
                pdd: Vector3::zeros(),
                rot: *rot,
                omega: Vector3::zeros(),
                omegad: Vector3::zeros(),
                orientation_tracked: true,
            },
            Task::Arc(arc) => {
                let (p, pd, pdd) = arc.sample(t);
                TaskReference {
                    p,
                    pd,
                    pdd,
                    rot: arc.rot,
                    omega: Vector3::zeros(),
                    omegad: Vector3::zeros(),
                    orientation_tracked: false,
                }
            }
        }
    }

    pub fn radius(&self) -> Option<f64> {
        match self {
            Task::Arc(a) => Some(a.radius()),
            Task::Still { .. } => None,
        }
    }
}
