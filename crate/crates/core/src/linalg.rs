//! Dense complex linear algebra used by the beamforming pipeline.
//!
//! Matrices are `nalgebra` dynamic matrices of `Complex64`. The decompositions
//! are delegated to `nalgebra`; this module adds the finiteness and
//! conditioning checks the rest of the crate relies on.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Largest condition number accepted by the solvers.
pub const MAX_CONDITION: f64 = 1e12;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Thin singular value decomposition `A = U diag(s) V^H`.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: CMatrix,
    pub s: Vec<f64>,
    pub v: CMatrix,
}

pub fn is_finite(a: &CMatrix) -> bool {
    a.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

fn ensure_finite(a: &CMatrix, what: &str) -> Result<()> {
    if is_finite(a) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what} has non-finite entries")))
    }
}

/// Thin SVD with singular values sorted in descending order.
pub fn svd_thin(a: &CMatrix) -> Result<Svd> {
    ensure_finite(a, "svd input")?;
    let k = a.nrows().min(a.ncols());
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));

    let mut u_sorted = CMatrix::zeros(a.nrows(), k);
    let mut v_sorted = CMatrix::zeros(a.ncols(), k);
    let mut s = Vec::with_capacity(k);
    for (dst, &src) in order.iter().enumerate() {
        s.push(svd.singular_values[src]);
        u_sorted.set_column(dst, &u.column(src));
        // row `src` of V^H, conjugated, is column `src` of V
        for r in 0..a.ncols() {
            v_sorted[(r, dst)] = v_t[(src, r)].conj();
        }
    }
    Ok(Svd {
        u: u_sorted,
        s,
        v: v_sorted,
    })
}

/// Ratio of the largest to the smallest singular value (infinite when singular).
pub fn condition_number(a: &CMatrix) -> Result<f64> {
    let s = a.clone().singular_values();
    if s.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("non-finite singular values".into()));
    }
    let max = s.iter().cloned().fold(0.0, f64::max);
    let min = s.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(if min > 0.0 { max / min } else { f64::INFINITY })
}

fn check_square_conditioned(a: &CMatrix, context: &'static str) -> Result<()> {
    if !a.is_square() {
        return Err(Error::InvalidInput(format!(
            "{context}: expected square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    ensure_finite(a, context)?;
    let condition = condition_number(a)?;
    if !condition.is_finite() || condition > MAX_CONDITION {
        return Err(Error::Singular {
            context,
            condition,
            pattern: None,
        });
    }
    Ok(())
}

/// Solve `A X = B` for a square `A` that is Hermitian positive definite or,
/// failing the Cholesky factorization, generally invertible.
pub fn solve_hermitian_many(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    check_square_conditioned(a, "linear solve")?;
    if a.nrows() != b.nrows() {
        return Err(Error::InvalidInput(format!(
            "linear solve: {} rows in A but {} in B",
            a.nrows(),
            b.nrows()
        )));
    }
    if is_hermitian(a) {
        if let Some(chol) = a.clone().cholesky() {
            return Ok(chol.solve(b));
        }
    }
    a.clone().lu().solve(b).ok_or(Error::Singular {
        context: "linear solve",
        condition: f64::INFINITY,
        pattern: None,
    })
}

pub fn solve_hermitian(a: &CMatrix, b: &CVector) -> Result<CVector> {
    let rhs = CMatrix::from_column_slice(b.len(), 1, b.as_slice());
    let x = solve_hermitian_many(a, &rhs)?;
    Ok(x.column(0).into_owned())
}

/// Inverse of a square, well-conditioned matrix.
pub fn inverse(a: &CMatrix, context: &'static str) -> Result<CMatrix> {
    check_square_conditioned(a, context)?;
    a.clone().try_inverse().ok_or(Error::Singular {
        context,
        condition: f64::INFINITY,
        pattern: None,
    })
}

pub fn is_hermitian(a: &CMatrix) -> bool {
    a.is_square() && frob_norm(&(a - a.adjoint())) <= 1e-12 * frob_norm(a)
}

pub fn frob_norm(a: &CMatrix) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Real inner product `Re tr(A^H B)` used as the Riemannian metric.
pub fn real_inner(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

/// Multiply the vector by a unit-modulus scalar so that its largest-magnitude
/// entry is real and positive.
pub fn fix_phase(v: &mut CVector) {
    let pivot = v
        .iter()
        .enumerate()
        .fold((0usize, -1.0f64), |best, (i, z)| {
            if z.norm() > best.1 {
                (i, z.norm())
            } else {
                best
            }
        })
        .0;
    let p = v[pivot];
    if p.norm() > 0.0 {
        let rot = p.conj() / p.norm();
        v.iter_mut().for_each(|z| *z *= rot);
    }
}
