//! Proximal conic subproblem
//!
//! ```text
//! min_{x ∈ C}  −⟨c, u⟩ + (λ_o/2) βᵀK_oβ
//!              + (ρ/2)(‖u − ū‖² + ‖β − β̄‖²_Q + ‖s − s̄‖²)
//! ```
//!
//! solved through its dual. For row multipliers `y` the cone blocks have
//! closed forms (PSD clipping, polytope projection, nonnegative part), so the
//! dual function `θ(y)` is smooth and concave with Hessian bounded by
//! `M/ρ`, `M = AA* + ρ E R Eᵀ + I_ineq`, `R = (λ_o K_o + ρQ)⁻¹`. Each pass
//! solves the combined `y_E`/`y_I` normal system with `M` and updates the
//! cone multipliers `S`, `Z`, `v` by projection; passes are accelerated with
//! gradient-based restarts.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::project::{project_psd, Polytope};
use crate::error::{Error, Result};
use crate::linalg::{conjugate_gradient, min_eigenvalue};
use crate::ral::{row_residual, LinearBundle, Primal, RalProblem, RowKey};

/// Passes between stall checks.
pub const STALL_WINDOW: usize = 500;
/// Residual below which a stalled subproblem may be accepted as is.
pub const STALL_ACCEPT: f64 = 1e-6;

/// Multipliers of the subproblem. `y` holds `y_E` then `y_I`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualIterate {
    pub keys: Vec<RowKey>,
    pub n_eq: usize,
    pub y: DVector<f64>,
    /// PSD-cone multiplier.
    pub s_psd: DMatrix<f64>,
    /// Polytope multipliers for `p` and `q`.
    pub z_p: DVector<f64>,
    pub z_q: DVector<f64>,
    /// Slack-cone multiplier.
    pub v: DVector<f64>,
}

impl DualIterate {
    pub fn zeros(problem: &RalProblem) -> Self {
        let ops = &problem.ops;
        DualIterate {
            keys: ops.rows.iter().map(|r| r.key).collect(),
            n_eq: ops.n_eq,
            y: DVector::zeros(ops.len()),
            s_psd: DMatrix::zeros(problem.dim(), problem.dim()),
            z_p: DVector::zeros(problem.n),
            z_q: DVector::zeros(problem.n),
            v: DVector::zeros(ops.n_ineq()),
        }
    }

    pub fn y_e(&self) -> DVector<f64> {
        self.y.rows(0, self.n_eq).into_owned()
    }

    pub fn y_i(&self) -> DVector<f64> {
        self.y.rows(self.n_eq, self.y.len() - self.n_eq).into_owned()
    }
}

/// Center and linear coefficient of one subproblem.
#[derive(Debug, Clone, Copy)]
pub struct ProxInput<'a> {
    pub center: &'a Primal,
    pub c: &'a LinearBundle,
}

#[derive(Debug, Clone)]
pub struct ProxOutput {
    pub x: Primal,
    pub dual: DualIterate,
    pub iterations: usize,
    /// Largest affine-row violation of `x`.
    pub residual: f64,
    pub primal_value: f64,
    pub dual_value: f64,
}

impl ProxOutput {
    pub fn gap(&self) -> f64 {
        (self.primal_value - self.dual_value).abs()
    }
}

/// Factorizations shared by every subproblem with the same `ρ`.
pub struct ProxSolver {
    pub rho: f64,
    pub q_metric: DMatrix<f64>,
    poly: Polytope,
    /// Cholesky factor of `λ_o K_o + ρQ`.
    r_chol: Cholesky<f64, Dyn>,
    normal: DMatrix<f64>,
    normal_chol: Option<Cholesky<f64, Dyn>>,
    /// Residual below which a stalled solve is accepted; `0` disables it.
    stall_accept: f64,
}

/// Default `Q`: `K_o + 1e-6·I`.
pub fn default_q_metric(problem: &RalProblem) -> DMatrix<f64> {
    &problem.k_o + DMatrix::identity(problem.n, problem.n) * 1e-6
}

impl ProxSolver {
    pub fn new(problem: &RalProblem, q_metric: DMatrix<f64>, rho: f64) -> Result<Self> {
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::Config(format!("rho = {rho} must be positive")));
        }
        let lam_o = problem.cfg.lambda_o;
        let r_mat = &problem.k_o * lam_o + &q_metric * rho;
        let r_chol = r_mat
            .cholesky()
            .ok_or_else(|| Error::Numeric("λ_o K_o + ρQ is not positive definite".into()))?;
        let ops = &problem.ops;
        let e = &ops.e;
        let ere = e * r_chol.solve(&e.transpose());
        let mut normal = ops.gram_u() + ere * rho;
        for k in ops.n_eq..ops.len() {
            normal[(k, k)] += 1.0;
        }
        let ridge = 1e-12 * (1.0 + normal.diagonal().amax());
        let shifted = &normal + DMatrix::identity(ops.len(), ops.len()) * ridge;
        let normal_chol = shifted.cholesky();
        Ok(ProxSolver {
            rho,
            q_metric,
            poly: Polytope::for_problem(problem),
            r_chol,
            normal,
            normal_chol,
            stall_accept: 0.0,
        })
    }

    /// Accepts iterates with residual at most [`STALL_ACCEPT`] once progress
    /// stalls, for use inside outer loops that tolerate inexact steps.
    pub fn accepting_stalls(mut self) -> Self {
        self.stall_accept = STALL_ACCEPT;
        self
    }

    pub fn polytope(&self) -> &Polytope {
        &self.poly
    }

    /// Solves `M d = r` for the ascent direction.
    fn normal_solve(&self, r: &DVector<f64>, guess: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.normal_chol {
            Some(ch) => Ok(ch.solve(r)),
            None => conjugate_gradient(&self.normal, r, guess, 1e-14, 10 * r.len().max(1)).map(|(x, _)| x),
        }
    }

    /// Primal minimizer of the Lagrangian at `y`.
    pub fn primal_from_dual(&self, problem: &RalProblem, input: ProxInput<'_>, y: &DVector<f64>) -> Result<Primal> {
        let rho = self.rho;
        let ops = &problem.ops;
        let ctr = input.center;
        let (ag, ap, aq) = ops.adjoint_u(y);
        let w_g = &ctr.lifted * rho + &input.c.g + ag;
        let lifted = project_psd(&(w_g / rho))?;
        let p_raw = &ctr.p + (&input.c.p + ap) / rho;
        let q_raw = &ctr.q + (&input.c.q + aq) / rho;
        let (p, q) = self.poly.project(&p_raw, &q_raw)?;
        let beta = self.r_chol.solve(&(&self.q_metric * &ctr.beta * rho + ops.adjoint_beta(y)));
        let s = DVector::from_fn(ops.n_ineq(), |k, _| (ctr.s[k] - y[ops.n_eq + k] / rho).max(0.0));
        Ok(Primal { lifted, p, q, beta, s })
    }

    /// Subproblem objective at `x`.
    pub fn primal_objective(&self, problem: &RalProblem, input: ProxInput<'_>, x: &Primal) -> f64 {
        -input.c.dot(x)
            + 0.5 * problem.cfg.lambda_o * x.beta.dot(&(&problem.k_o * &x.beta))
            + 0.5 * self.rho * x.dist_sq(input.center, &self.q_metric)
    }

    /// Cone multipliers consistent with `y` and the recovered primal.
    pub fn dual_blocks(&self, problem: &RalProblem, input: ProxInput<'_>, x: &Primal, y: &DVector<f64>) -> DualIterate {
        let rho = self.rho;
        let ops = &problem.ops;
        let ctr = input.center;
        let (ag, ap, aq) = ops.adjoint_u(y);
        let w_g = &ctr.lifted * rho + &input.c.g + ag;
        let w_p = &ctr.p * rho + &input.c.p + ap;
        let w_q = &ctr.q * rho + &input.c.q + aq;
        DualIterate {
            keys: ops.rows.iter().map(|r| r.key).collect(),
            n_eq: ops.n_eq,
            y: y.clone(),
            s_psd: &x.lifted * rho - w_g,
            z_p: &x.p * rho - w_p,
            z_q: &x.q * rho - w_q,
            v: DVector::from_fn(ops.n_ineq(), |k, _| (y[ops.n_eq + k] - rho * ctr.s[k]).max(0.0)),
        }
    }

    /// Solves the subproblem to affine residual `tol`, warm-starting the
    /// multipliers from `warm` when its rows match.
    pub fn solve(
        &self,
        problem: &RalProblem,
        input: ProxInput<'_>,
        warm: Option<&DualIterate>,
        tol: f64,
        max_iter: usize,
    ) -> Result<ProxOutput> {
        let ops = &problem.ops;
        let mut y = match warm {
            Some(w) if w.y.len() == ops.len() => w.y.clone(),
            _ => DVector::zeros(ops.len()),
        };
        let mut z = y.clone();
        let mut t = 1.0_f64;
        let mut last_residual = f64::INFINITY;
        let mut trace = Vec::new();
        let mut window_best = f64::INFINITY;
        for it in 1..=max_iter {
            let x = self.primal_from_dual(problem, input, &z)?;
            let r = row_residual(problem, &x);
            let res = r.amax();
            last_residual = res;
            if it % 50 == 0 {
                trace.push(res);
            }
            let stalled = it % STALL_WINDOW == 0 && res <= self.stall_accept && res > 0.9 * window_best;
            if it % STALL_WINDOW == 0 {
                window_best = window_best.min(res);
            }
            if stalled {
                log::debug!("proximal subproblem stalled at residual {res:.3e} (target {tol:.1e}) after {it} passes");
            }
            if (res <= tol && it >= 3) || stalled {
                let primal_value = self.primal_objective(problem, input, &x);
                let dual_value = primal_value - z.dot(&r);
                let dual = self.dual_blocks(problem, input, &x, &z);
                return Ok(ProxOutput { x, dual, iterations: it, residual: res, primal_value, dual_value });
            }
            // ∇θ(z) = −r. Majorized ascent step in the metric M/ρ.
            let step = self.normal_solve(&(-&r * self.rho), &(&z - &y))?;
            let y_next = &z + &step;
            let restart = r.dot(&(&y_next - &y)) > 0.0;
            if restart {
                t = 1.0;
                z = y_next.clone();
            } else {
                let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
                z = &y_next + (&y_next - &y) * ((t - 1.0) / t_next);
                t = t_next;
            }
            y = y_next;
        }
        Err(Error::Budget { what: "proximal subproblem", iterations: max_iter, residual: last_residual, trace })
    }
}

/// Residuals of the subproblem optimality system at `(x, dual)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResidual {
    /// Affine rows.
    pub primal: f64,
    /// Distance of `G`, `(p, q)` and `s` from their cones.
    pub cone: f64,
    /// Negativity of `S` and `v`.
    pub dual: f64,
    /// Complementarity of each cone pair.
    pub complementarity: f64,
    /// Gradient of the Lagrangian.
    pub stationarity: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.primal.max(self.cone).max(self.dual).max(self.complementarity).max(self.stationarity)
    }
}

pub fn kkt_residual(
    problem: &RalProblem,
    solver: &ProxSolver,
    input: ProxInput<'_>,
    x: &Primal,
    d: &DualIterate,
) -> Result<KktResidual> {
    let rho = solver.rho;
    let ops = &problem.ops;
    let ctr = input.center;
    let poly = solver.polytope();
    let primal = row_residual(problem, x).amax();
    let cone = (-min_eigenvalue(&x.lifted))
        .max(poly.violation(&x.p, &x.q))
        .max(-x.s.min().min(0.0))
        .max(0.0);
    let dual = (-min_eigenvalue(&d.s_psd)).max(-d.v.min().min(0.0)).max(0.0);
    let (pz, qz) = poly.project(&(&x.p + &d.z_p / rho), &(&x.q + &d.z_q / rho))?;
    let complementarity = x
        .lifted
        .dot(&d.s_psd)
        .abs()
        .max(x.s.dot(&d.v).abs())
        .max((pz - &x.p).amax())
        .max((qz - &x.q).amax());
    let (ag, ap, aq) = ops.adjoint_u(&d.y);
    let st_g = (&x.lifted - &ctr.lifted) * rho - &input.c.g - ag - &d.s_psd;
    let st_p = (&x.p - &ctr.p) * rho - &input.c.p - ap - &d.z_p;
    let st_q = (&x.q - &ctr.q) * rho - &input.c.q - aq - &d.z_q;
    let st_b = &problem.k_o * &x.beta * problem.cfg.lambda_o + &solver.q_metric * (&x.beta - &ctr.beta) * rho
        - ops.adjoint_beta(&d.y);
    let y_i = d.y_i();
    let st_s = (&x.s - &ctr.s) * rho + y_i - &d.v;
    let stationarity = [st_g.amax(), st_p.amax(), st_q.amax(), st_b.amax(), st_s.amax()]
        .into_iter()
        .fold(0.0, f64::max);
    Ok(KktResidual { primal, cone, dual, complementarity, stationarity })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{two_gaussians, SyntheticSpec};
    use crate::kernel::GramPair;
    use crate::ral::{assemble, build_ck, RalConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy(n: usize, labeled: usize, seed: u64) -> (RalProblem, crate::ral::SaddlePoint) {
        let spec = SyntheticSpec { n, dim: 2, separation: 3.0, margin: 0.0, labeled };
        let d = two_gaussians(&spec, seed).unwrap();
        let g = GramPair::default_for(&d.features).unwrap();
        assemble(&d, &g, &RalConfig::default()).unwrap()
    }

    #[test]
    fn feasible_center_with_zero_coefficient_is_fixed() {
        let (prob, x0) = toy(5, 2, 1);
        let solver = ProxSolver::new(&prob, default_q_metric(&prob), 2.0).unwrap();
        let c = LinearBundle::zeros(&prob);
        let out = solver.solve(&prob, ProxInput { center: &x0.x, c: &c }, None, 1e-11, 20_000).unwrap();
        assert!(out.x.dist_sq(&x0.x, &solver.q_metric).sqrt() < 1e-8);
    }

    #[test]
    fn random_subproblem_has_small_gap_and_kkt() {
        let (prob, x0) = toy(5, 3, 2);
        let solver = ProxSolver::new(&prob, default_q_metric(&prob), 1.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let alpha = DVector::from_fn(5, |_, _| rng.random_range(0.0..1.0));
        let c = build_ck(&prob, &alpha);
        let input = ProxInput { center: &x0.x, c: &c };
        let out = solver.solve(&prob, input, None, 1e-11, 50_000).unwrap();
        assert!(out.gap() < 1e-6, "gap {}", out.gap());
        let kkt = kkt_residual(&prob, &solver, input, &out.x, &out.dual).unwrap();
        assert!(kkt.max() < 1e-7, "{kkt:?}");
    }

    #[test]
    fn kkt_detects_perturbation() {
        let (prob, x0) = toy(5, 3, 4);
        let solver = ProxSolver::new(&prob, default_q_metric(&prob), 1.0).unwrap();
        let c = build_ck(&prob, &DVector::from_element(5, 0.5));
        let input = ProxInput { center: &x0.x, c: &c };
        let out = solver.solve(&prob, input, None, 1e-11, 50_000).unwrap();
        let mut bad = out.x.clone();
        bad.p[0] += 1e-3;
        let kkt = kkt_residual(&prob, &solver, input, &bad, &out.dual).unwrap();
        assert!(kkt.max() >= 1e-4);
    }
}
