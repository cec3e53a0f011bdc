//! Small dense linear-algebra helpers shared by the estimator, controller
//! and attacker.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub type Chol = Cholesky<f64, Dyn>;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn cholesky(m: &DMatrix<f64>, what: &'static str) -> Result<Chol> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what));
    }
    Cholesky::new(symmetrize(m)).ok_or(Error::NotPositiveDefinite(what))
}

/// Square-root factor `S` with `S Sᵀ = m` for a symmetric PSD matrix.
/// Falls back to an eigen-decomposition when Cholesky fails (e.g. `m = 0`).
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = symmetrize(m);
    if let Some(ch) = Cholesky::new(sym.clone()) {
        return ch.l();
    }
    let eig = sym.symmetric_eigen();
    let mut s = eig.eigenvectors.clone();
    for (j, lam) in eig.eigenvalues.iter().enumerate() {
        let root = lam.max(0.0).sqrt();
        s.column_mut(j).scale_mut(root);
    }
    s
}

/// Quadratic form `vᵀ S⁻¹ v` using a stored Cholesky factor of `S`.
pub fn inv_quad_form(chol: &Chol, v: &DVector<f64>) -> f64 {
    let l = chol.l_dirty();
    let y = l
        .solve_lower_triangular(v)
        .expect("cholesky factor has a nonzero diagonal");
    y.norm_squared()
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max)
}

pub fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

pub fn relative_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let denom = b.norm();
    if denom == 0.0 {
        a.norm()
    } else {
        (a - b).norm() / denom
    }
}

/// Filter-form Riccati map
/// `f(P) = A P Aᵀ + Q − A P Cᵀ (C P Cᵀ + R)⁻¹ C P Aᵀ`.
pub fn riccati_map(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let s = c * p * c.transpose() + r;
    let chol = cholesky(&s, "C P Cᵀ + R")?;
    let apc = a * p * c.transpose();
    let correction = &apc * chol.solve(&apc.transpose());
    Ok(symmetrize(&(a * p * a.transpose() + q - correction)))
}

pub const RICCATI_TOL: f64 = 1e-12;
pub const RICCATI_MAX_ITER: usize = 1_000_000;

/// Fixed-point iteration of the filter Riccati map starting from `P₀ = Q`.
/// The control-form equation is obtained with `(Aᵀ, Bᵀ)` in place of `(A, C)`.
pub fn solve_riccati(a: &DMatrix<f64>, c: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut p = symmetrize(q);
    for _ in 0..RICCATI_MAX_ITER {
        let next = riccati_map(a, c, q, r, &p)?;
        let scale = next.norm();
        let step = (&next - &p).norm();
        p = next;
        if step <= RICCATI_TOL * scale || (scale == 0.0 && step == 0.0) {
            return Ok(p);
        }
        if !scale.is_finite() {
            break;
        }
    }
    let s = c * &p * c.transpose() + r;
    let rho = match cholesky(&s, "C P Cᵀ + R") {
        Ok(ch) => {
            let gain = a * &p * c.transpose() * ch.inverse();
            spectral_radius(&(a - gain * c))
        }
        Err(_) => f64::NAN,
    };
    Err(Error::RiccatiDivergence {
        iterations: RICCATI_MAX_ITER,
        spectral_radius: rho,
    })
}

/// Moore–Penrose pseudoinverse of a full-row-rank matrix together with its
/// smallest singular value.
pub fn pinv_full_row_rank(j: &DMatrix<f64>, sigma_floor: f64) -> Result<(DMatrix<f64>, f64)> {
    let svd = j.clone().svd(true, true);
    let sigma_min = svd.singular_values.iter().copied().fold(f64::INFINITY, f64::min);
    if !(sigma_min >= sigma_floor) {
        return Err(Error::RankDeficient { sigma_min });
    }
    let jjt = j * j.transpose();
    let chol = cholesky(&jjt, "J Jᵀ").map_err(|_| Error::RankDeficient { sigma_min })?;
    Ok((j.transpose() * chol.inverse(), sigma_min))
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}
