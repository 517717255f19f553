//! Projections onto the cones and the polytope of the relaxed problem.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::linalg::symmetrize;
use crate::ral::{Primal, RalProblem};

/// Nearest PSD matrix in Frobenius norm: negative eigenvalues clipped.
pub fn project_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("PSD projection of a non-finite matrix".into()));
    }
    let sym = symmetrize(m);
    let n = sym.nrows();
    if n == 0 {
        return Ok(sym);
    }
    let eig = SymmetricEigen::try_new(sym.clone(), 1e-15, 10_000).ok_or_else(|| {
        Error::Numeric(format!(
            "eigensolver failed on a {n}×{n} matrix (max entry {:.3e})",
            sym.amax()
        ))
    })?;
    let negative: Vec<usize> = (0..n).filter(|&k| eig.eigenvalues[k] < 0.0).collect();
    if negative.is_empty() {
        return Ok(sym);
    }
    // Build from whichever side of the spectrum is smaller.
    let out = if 2 * negative.len() <= n {
        let v = eig.eigenvectors.select_columns(&negative);
        let scaled = DMatrix::from_fn(n, negative.len(), |i, j| v[(i, j)] * eig.eigenvalues[negative[j]]);
        &sym - scaled * v.transpose()
    } else {
        let positive: Vec<usize> = (0..n).filter(|&k| eig.eigenvalues[k] > 0.0).collect();
        let v = eig.eigenvectors.select_columns(&positive);
        let scaled = DMatrix::from_fn(n, positive.len(), |i, j| v[(i, j)] * eig.eigenvalues[positive[j]]);
        scaled * v.transpose()
    };
    Ok(symmetrize(&out))
}

pub fn project_box(v: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(v.len(), |i, _| v[i].clamp(lo[i], hi[i]))
}

/// The feasible set of `(p, q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polytope {
    pub p_ub: DVector<f64>,
    pub q_ub: DVector<f64>,
    /// `1ᵀq = q_sum`.
    pub q_sum: f64,
    /// `1ᵀp ≤ p_cap`.
    pub p_cap: f64,
    /// Indices of labeled instances and the cap on their `p` mass.
    pub labeled: Vec<usize>,
    pub labeled_cap: f64,
}

pub const POLYTOPE_TOL: f64 = 1e-9;
const POLYTOPE_SWEEPS: usize = 500;

impl Polytope {
    pub fn for_problem(problem: &RalProblem) -> Self {
        Polytope {
            p_ub: problem.p_ub.clone(),
            q_ub: problem.q_ub.clone(),
            q_sum: problem.q_sum,
            p_cap: problem.cfg.n_o as f64,
            labeled: (0..problem.n).filter(|&i| problem.labeled[i]).collect(),
            labeled_cap: problem.cfg.n_lbn() as f64,
        }
    }

    /// Euclidean projection of `(p, q)`.
    ///
    /// `q` is independent of `p`; its box–hyperplane slice is solved exactly.
    /// The `p` constraints are intersected by Dykstra's method.
    pub fn project(&self, p: &DVector<f64>, q: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let q = project_box_sum(q, &self.q_ub, self.q_sum, true)?;
        let p = self.project_p(p)?;
        Ok((p, q))
    }

    fn project_p(&self, p: &DVector<f64>) -> Result<DVector<f64>> {
        let first = project_box_sum(p, &self.p_ub, self.p_cap, false)?;
        let labeled_mass: f64 = self.labeled.iter().map(|&i| first[i]).sum();
        if labeled_mass <= self.labeled_cap + POLYTOPE_TOL {
            return Ok(first);
        }
        // Dykstra between A = box ∩ {1ᵀp ≤ n_o} and B = {e_lᵀp ≤ n_lbn}.
        let mut x = p.clone();
        let mut inc_a = DVector::zeros(p.len());
        let mut inc_b = DVector::zeros(p.len());
        let mut residual = f64::INFINITY;
        for sweep in 1..=POLYTOPE_SWEEPS {
            let ya = project_box_sum(&(&x + &inc_a), &self.p_ub, self.p_cap, false)?;
            inc_a = &x + &inc_a - &ya;
            let xb = self.project_labeled_halfspace(&(&ya + &inc_b));
            inc_b = &ya + &inc_b - &xb;
            residual = (&xb - &x).amax().max(self.violation_p(&xb));
            x = xb;
            if residual <= 1e-14 || (sweep > 2 && residual <= POLYTOPE_TOL * 1e-3) {
                break;
            }
        }
        let violation = self.violation_p(&x);
        if violation > POLYTOPE_TOL {
            return Err(Error::Tolerance { residual: violation.max(residual), sweeps: POLYTOPE_SWEEPS });
        }
        Ok(x)
    }

    fn project_labeled_halfspace(&self, p: &DVector<f64>) -> DVector<f64> {
        let mass: f64 = self.labeled.iter().map(|&i| p[i]).sum();
        let mut out = p.clone();
        if mass > self.labeled_cap && !self.labeled.is_empty() {
            let shift = (mass - self.labeled_cap) / self.labeled.len() as f64;
            for &i in &self.labeled {
                out[i] -= shift;
            }
        }
        out
    }

    fn violation_p(&self, p: &DVector<f64>) -> f64 {
        let mut v = 0.0_f64;
        for i in 0..p.len() {
            v = v.max(-p[i]).max(p[i] - self.p_ub[i]);
        }
        v = v.max(p.sum() - self.p_cap);
        let lm: f64 = self.labeled.iter().map(|&i| p[i]).sum();
        v.max(lm - self.labeled_cap)
    }

    /// Largest constraint violation of `(p, q)`.
    pub fn violation(&self, p: &DVector<f64>, q: &DVector<f64>) -> f64 {
        let mut v = self.violation_p(p);
        for i in 0..q.len() {
            v = v.max(-q[i]).max(q[i] - self.q_ub[i]);
        }
        v.max((q.sum() - self.q_sum).abs())
    }
}

/// Projection onto `{0 ≤ x ≤ ub, 1ᵀx = total}` (or `≤ total` when
/// `equality` is false), by bisection on the shift `x = clamp(v − μ)`.
pub fn project_box_sum(v: &DVector<f64>, ub: &DVector<f64>, total: f64, equality: bool) -> Result<DVector<f64>> {
    let n = v.len();
    let sum_at = |mu: f64| -> f64 { v.iter().zip(ub.iter()).map(|(&a, &u)| (a - mu).clamp(0.0, u)).sum() };
    let clamp_at = |mu: f64| DVector::from_fn(n, |i, _| (v[i] - mu).clamp(0.0, ub[i]));
    if n == 0 || (!equality && sum_at(0.0) <= total) {
        return Ok(clamp_at(0.0));
    }
    let capacity = ub.sum();
    if total > capacity + 1e-12 || total < -1e-12 {
        return Err(Error::Contract(format!(
            "sum {total} is outside the box range [0, {capacity}]"
        )));
    }
    // s(μ) = Σ clamp(v − μ, 0, u) is piecewise linear and nonincreasing with
    // breakpoints at v_i and v_i − u_i; locate the segment holding the root.
    let mut breaks: Vec<f64> = v.iter().zip(ub.iter()).flat_map(|(&a, &u)| [a, a - u]).collect();
    breaks.sort_by(|a, b| b.total_cmp(a));
    let mut hi = breaks[0];
    let mut s_hi = sum_at(hi);
    for &mu in &breaks[1..] {
        let s_mu = sum_at(mu);
        if s_mu >= total {
            // Root in [mu, hi]; s is linear there.
            let mu_star = if s_mu - s_hi > 0.0 { mu + (s_mu - total) / (s_mu - s_hi) * (hi - mu) } else { mu };
            return Ok(clamp_at(mu_star));
        }
        hi = mu;
        s_hi = s_mu;
    }
    Ok(clamp_at(hi))
}

/// Projection onto the simple sets: PSD lifted matrix, polytope, `s ≥ 0`.
/// The affine rows are not enforced.
pub fn project_simple(poly: &Polytope, x: &Primal) -> Result<Primal> {
    let lifted = project_psd(&x.lifted)?;
    let (p, q) = poly.project(&x.p, &x.q)?;
    Ok(Primal { lifted, p, q, beta: x.beta.clone(), s: x.s.map(|v| v.max(0.0)) })
}
