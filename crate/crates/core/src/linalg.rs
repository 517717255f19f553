//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// `(M + Mᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn hadamard(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.component_mul(b)
}

pub fn frobenius_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Smallest eigenvalue of a symmetric matrix (symmetrized on entry).
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Largest eigenvalue of a symmetric PSD operator by power iteration.
///
/// Starts from the all-ones vector so the estimate is deterministic.
pub fn power_iteration<F>(dim: usize, iterations: usize, mut apply: F) -> f64
where
    F: FnMut(&DVector<f64>) -> DVector<f64>,
{
    if dim == 0 {
        return 0.0;
    }
    let mut v = DVector::from_element(dim, 1.0 / (dim as f64).sqrt());
    let mut estimate = 0.0;
    for _ in 0..iterations {
        let w = apply(&v);
        let norm = w.norm();
        if norm <= f64::MIN_POSITIVE {
            return 0.0;
        }
        estimate = v.dot(&w);
        v = w / norm;
    }
    // Rayleigh quotient of the final iterate.
    estimate.max(v.dot(&apply(&v)))
}

/// Conjugate gradient for a dense SPD system, warm-started from `x0`.
///
/// Returns the solution and the number of iterations used.
pub fn conjugate_gradient(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    x0: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<(DVector<f64>, usize)> {
    let n = b.len();
    if n == 0 {
        return Ok((DVector::zeros(0), 0));
    }
    let mut x = x0.clone();
    let mut r = b - a * &x;
    let b_norm = b.norm().max(1.0);
    let mut rr = r.dot(&r);
    if rr.sqrt() <= tol * b_norm {
        return Ok((x, 0));
    }
    let mut p = r.clone();
    for it in 1..=max_iter {
        let ap = a * &p;
        let pap = p.dot(&ap);
        if !(pap > 0.0) || !pap.is_finite() {
            return Err(Error::Numeric(format!(
                "conjugate gradient breakdown at iteration {it}: pᵀAp = {pap:e}"
            )));
        }
        let step = rr / pap;
        x.axpy(step, &p, 1.0);
        r.axpy(-step, &ap, 1.0);
        let rr_next = r.dot(&r);
        if rr_next.sqrt() <= tol * b_norm {
            return Ok((x, it));
        }
        p = &r + &p * (rr_next / rr);
        rr = rr_next;
    }
    // CG on an SPD system of dimension n converges in n steps in exact
    // arithmetic; anything left is rounding. Accept the iterate.
    Ok((x, max_iter))
}

/// Dense solve with Cholesky, falling back to LU for indefinite input.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        return Some(ch.solve(b));
    }
    a.clone().lu().solve(b)
}
