//! Strictly convex QP with one convex quadratic inequality, solved by
//! bisection on the Lagrange multiplier.
//!
//! minimize ½ΔᵀHΔ + gᵀΔ  subject to  ΔᵀQcΔ + q_linᵀΔ + c0 ≤ 0

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, symmetrize};

pub const DEFAULT_TOL: f64 = 1e-10;
const MAX_DOUBLINGS: usize = 200;
const MAX_BISECTIONS: usize = 400;

#[derive(Debug, Clone, PartialEq)]
pub struct QcqpProblem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub qc: DMatrix<f64>,
    pub q_lin: DVector<f64>,
    pub c0: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QcqpSolution {
    pub delta: DVector<f64>,
    pub lambda: f64,
    pub active: bool,
    pub constraint: f64,
}

impl QcqpProblem {
    pub fn objective(&self, delta: &DVector<f64>) -> f64 {
        0.5 * delta.dot(&(&self.h * delta)) + self.g.dot(delta)
    }

    pub fn constraint(&self, delta: &DVector<f64>) -> f64 {
        delta.dot(&(&self.qc * delta)) + self.q_lin.dot(delta) + self.c0
    }

    /// Stationary point of the Lagrangian at multiplier `lambda`.
    pub fn kkt_point(&self, lambda: f64) -> Result<DVector<f64>> {
        let m = &self.h + &self.qc * (2.0 * lambda);
        let chol = cholesky(&m, "H + 2λQc")?;
        Ok(-chol.solve(&(&self.g + &self.q_lin * lambda)))
    }

    /// Infimum of the constraint function over all Δ (−∞ when unbounded).
    pub fn constraint_infimum(&self) -> f64 {
        let eig = symmetrize(&self.qc).symmetric_eigen();
        let b = eig.eigenvectors.transpose() * &self.q_lin;
        let scale = eig.eigenvalues.amax().max(1.0);
        let mut v = self.c0;
        for (lam, bi) in eig.eigenvalues.iter().zip(b.iter()) {
            if *lam > 1e-12 * scale {
                v -= bi * bi / (4.0 * lam);
            } else if bi.abs() > 1e-12 * (1.0 + self.q_lin.norm()) {
                return f64::NEG_INFINITY;
            }
        }
        v
    }

    /// Minimizer of the constraint function (least-norm when not unique).
    pub fn constraint_minimizer(&self) -> DVector<f64> {
        let eig = symmetrize(&self.qc).symmetric_eigen();
        let b = eig.eigenvectors.transpose() * &self.q_lin;
        let scale = eig.eigenvalues.amax().max(1.0);
        let y = DVector::from_fn(b.len(), |i, _| {
            let lam = eig.eigenvalues[i];
            if lam > 1e-12 * scale {
                -b[i] / (2.0 * lam)
            } else {
                0.0
            }
        });
        eig.eigenvectors * y
    }

    fn validate(&self) -> Result<()> {
        let n = self.g.len();
        if self.h.shape() != (n, n) || self.qc.shape() != (n, n) || self.q_lin.len() != n {
            return Err(Error::InvalidParameter("QCQP dimensions disagree".into()));
        }
        let finite = self
            .h
            .iter()
            .chain(self.qc.iter())
            .chain(self.g.iter())
            .chain(self.q_lin.iter())
            .all(|v| v.is_finite());
        if !finite || !self.c0.is_finite() {
            return Err(Error::NonFinite("QCQP data"));
        }
        cholesky(&self.h, "QCQP cost Hessian H")?;
        let min_eig = symmetrize(&self.qc).symmetric_eigenvalues().min();
        if min_eig < -1e-10 * self.qc.amax().max(1.0) {
            return Err(Error::NotPositiveDefinite("QCQP constraint Hessian Qc (not PSD)"));
        }
        Ok(())
    }
}

pub fn solve(prob: &QcqpProblem, tol: f64) -> Result<QcqpSolution> {
    prob.validate()?;
    let d0 = prob.kkt_point(0.0)?;
    let c_at_0 = prob.constraint(&d0);
    if c_at_0 <= 0.0 {
        return Ok(QcqpSolution {
            delta: d0,
            lambda: 0.0,
            active: false,
            constraint: c_at_0,
        });
    }
    let inf = prob.constraint_infimum();
    if inf > 0.0 {
        return Err(Error::Infeasible { min_constraint: inf });
    }

    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut d_hi = prob.kkt_point(hi)?;
    let mut c_hi = prob.constraint(&d_hi);
    let mut doublings = 0;
    while c_hi > 0.0 {
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings > MAX_DOUBLINGS {
            return Err(Error::NoConvergence {
                lo,
                hi,
                constraint: c_hi,
            });
        }
        d_hi = prob.kkt_point(hi)?;
        c_hi = prob.constraint(&d_hi);
    }

    for _ in 0..MAX_BISECTIONS {
        if c_hi >= -tol || hi - lo <= f64::EPSILON * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let d_mid = prob.kkt_point(mid)?;
        let c_mid = prob.constraint(&d_mid);
        if c_mid > 0.0 {
            lo = mid;
        } else {
            hi = mid;
            d_hi = d_mid;
            c_hi = c_mid;
        }
    }
    if c_hi < -tol && hi - lo > f64::EPSILON * hi * 4.0 {
        return Err(Error::NoConvergence {
            lo,
            hi,
            constraint: c_hi,
        });
    }
    Ok(QcqpSolution {
        delta: d_hi,
        lambda: hi,
        active: true,
        constraint: c_hi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_d() -> QcqpProblem {
        QcqpProblem {
            h: DMatrix::from_element(1, 1, 1.0),
            g: DVector::from_element(1, -2.0),
            qc: DMatrix::from_element(1, 1, 1.0),
            q_lin: DVector::zeros(1),
            c0: -1.0,
        }
    }

    #[test]
    fn one_dimensional_hand_solution() {
        let s = solve(&one_d(), DEFAULT_TOL).unwrap();
        assert!(s.active);
        assert!((s.delta[0] - 1.0).abs() < 1e-9);
        assert!((s.lambda - 0.5).abs() < 1e-8);
        assert!(s.constraint <= 0.0 && s.constraint >= -1e-9);
    }

    #[test]
    fn inactive_returns_unconstrained_minimizer() {
        let mut p = one_d();
        p.c0 = -9.0;
        let s = solve(&p, DEFAULT_TOL).unwrap();
        assert!(!s.active && s.lambda == 0.0);
        assert_eq!(s.delta[0], 2.0);
    }

    #[test]
    fn infeasible_is_reported() {
        let mut p = one_d();
        p.c0 = 0.5;
        assert!(matches!(solve(&p, DEFAULT_TOL), Err(Error::Infeasible { .. })));
        assert!((p.constraint_infimum() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn semidefinite_constraint_unbounded_direction() {
        // constraint x₁ − 1 ≤ 0 (Qc = 0 on the first axis), objective pulls x₁ to 3
        let p = QcqpProblem {
            h: DMatrix::identity(2, 2),
            g: DVector::from_vec(vec![-3.0, 0.0]),
            qc: DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]),
            q_lin: DVector::from_vec(vec![1.0, 0.0]),
            c0: -1.0,
        };
        assert_eq!(p.constraint_infimum(), f64::NEG_INFINITY);
        let s = solve(&p, DEFAULT_TOL).unwrap();
        assert!((s.delta[0] - 1.0).abs() < 1e-8 && s.delta[1].abs() < 1e-12);
        assert!((s.lambda - 2.0).abs() < 1e-6);
    }

    #[test]
    fn dual_constraint_is_monotone() {
        let p = QcqpProblem {
            h: DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.0, 0.3, 1.0, 0.1, 0.0, 0.1, 0.5]),
            g: DVector::from_vec(vec![-4.0, 1.0, 3.0]),
            qc: DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.2, 0.6, 0.0, 0.0, 0.0, 0.1]),
            q_lin: DVector::from_vec(vec![0.4, -0.2, 0.1]),
            c0: -0.5,
        };
        let mut prev = f64::INFINITY;
        for i in 0..200 {
            let lam = i as f64 * 0.05;
            let c = p.constraint(&p.kkt_point(lam).unwrap());
            assert!(c <= prev + 1e-12);
            prev = c;
        }
    }

    #[test]
    fn rejects_indefinite_cost() {
        let mut p = one_d();
        p.h[(0, 0)] = -1.0;
        assert!(solve(&p, DEFAULT_TOL).is_err());
    }
}
