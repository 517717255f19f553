//! Solver entry points for an assembled relaxed problem.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::lipschitz::estimate_lipschitz;
use super::nesterov::{accelerated_composite, Accumulator, NesterovSettings, OracleAnswer};
use super::project::{project_simple, Polytope};
use super::prox::{default_q_metric, kkt_residual, DualIterate, ProxInput, ProxOutput, ProxSolver};
use super::tseng::{tseng, SplitProblem, TsengSettings};
use super::warm::WarmStartState;
use super::TraceRecord;
use crate::error::{Error, Result};
use crate::ral::{build_ck, grad_alpha, initial_point, objective, LinearBundle, Primal, RalProblem, SaddlePoint};

/// Inner accuracy as a fraction of the latest outer residual.
const INNER_RELATIVE: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Tseng,
    #[default]
    Nesterov,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub kind: SolverKind,
    /// Proximal weight of the accelerated method; from the Lipschitz
    /// estimates when absent.
    pub rho: Option<f64>,
    /// Splitting step; `0.9 / L` when absent.
    pub gamma: Option<f64>,
    pub tol_fixed_point: f64,
    /// Floor of the inner tolerance schedule.
    pub tol_inner: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// β-block metric; `K_o + 1e-6·I` when absent.
    pub q_metric: Option<DMatrix<f64>>,
    /// `(L_αα, L_αx)`; estimated when absent.
    pub lipschitz: Option<(f64, f64)>,
    pub seed: u64,
    pub record_timing: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            kind: SolverKind::Nesterov,
            rho: None,
            gamma: None,
            tol_fixed_point: 1e-6,
            tol_inner: 1e-11,
            max_outer: 20_000,
            max_inner: 20_000,
            q_metric: None,
            lipschitz: None,
            seed: 0,
            record_timing: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.tol_fixed_point) || !positive(self.tol_inner) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        if self.rho.is_some_and(|r| !positive(r)) || self.gamma.is_some_and(|g| !positive(g)) {
            return Err(Error::Config("rho and gamma must be positive".into()));
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return Err(Error::Config("iteration caps must be positive".into()));
        }
        Ok(())
    }

    /// Inner tolerance after an outer step with residual `last_residual`:
    /// a fixed fraction of it, capped at `1e-4` and floored at `tol_inner`.
    pub fn inner_tol(&self, last_residual: f64) -> f64 {
        (INNER_RELATIVE * last_residual).min(1e-4).max(self.tol_inner)
    }
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub point: SaddlePoint,
    pub dual: DualIterate,
    pub trace: Vec<TraceRecord>,
    /// Outer iterations (splitting) or subproblem solves (accelerated).
    pub iterations: usize,
    /// Dual passes summed over all subproblems.
    pub inner_iterations: usize,
    /// `−f` at the returned point.
    pub objective: f64,
    pub accumulator: Option<Accumulator>,
    pub lipschitz: (f64, f64),
}

impl SolveOutcome {
    pub fn warm_state(&self, problem: &RalProblem) -> WarmStartState {
        WarmStartState::new(problem, self.point.clone(), Some(self.dual.clone()), self.accumulator.clone())
    }
}

fn lipschitz_of(problem: &RalProblem, cfg: &SolverConfig) -> Result<(f64, f64)> {
    match cfg.lipschitz {
        Some(l) => Ok(l),
        None => estimate_lipschitz(problem, cfg.seed),
    }
}

fn q_metric_of(problem: &RalProblem, cfg: &SolverConfig) -> Result<DMatrix<f64>> {
    match &cfg.q_metric {
        Some(q) if q.nrows() == problem.n && q.ncols() == problem.n => Ok(q.clone()),
        Some(q) => Err(Error::Config(format!("Q metric is {}×{}, expected {}", q.nrows(), q.ncols(), problem.n))),
        None => Ok(default_q_metric(problem)),
    }
}

fn start_of(problem: &RalProblem, warm: Option<&WarmStartState>) -> Result<(SaddlePoint, Option<DualIterate>)> {
    match warm {
        Some(w) if w.matches(problem) => Ok((w.point.clone(), w.dual.clone())),
        Some(_) => Err(Error::Contract("warm state does not match the problem layout".into())),
        None => Ok((initial_point(problem), None)),
    }
}

/// One proximal conic step `argmin_{x∈C} −⟨c, u⟩ + (λ_o/2)βᵀK_oβ + (ρ/2)‖x − center‖²`.
pub fn prox_subproblem(
    problem: &RalProblem,
    center: &Primal,
    c: &LinearBundle,
    cfg: &SolverConfig,
    rho: f64,
) -> Result<ProxOutput> {
    let solver = ProxSolver::new(problem, q_metric_of(problem, cfg)?, rho)?;
    solver.solve(problem, ProxInput { center, c }, None, cfg.tol_inner, cfg.max_inner)
}

/// Forward-backward-forward splitting on `t = (x, α)`.
struct RalSplit<'a> {
    problem: &'a RalProblem,
    template: Primal,
    q_metric: DMatrix<f64>,
    poly: Polytope,
    cfg: &'a SolverConfig,
    solver: Option<ProxSolver>,
    dual: Option<DualIterate>,
    last_kkt: f64,
    last_inner: usize,
    inner_total: usize,
}

impl RalSplit<'_> {
    fn split(&self, t: &DVector<f64>) -> (Primal, DVector<f64>) {
        let len = self.template.packed_len();
        let x = self.template.unpack(&t.as_slice()[..len]);
        (x, t.rows(len, self.problem.n).into_owned())
    }

    fn join(x: &Primal, alpha: &DVector<f64>) -> DVector<f64> {
        let packed = x.pack();
        let mut t = DVector::zeros(packed.len() + alpha.len());
        t.rows_mut(0, packed.len()).copy_from(&packed);
        t.rows_mut(packed.len(), alpha.len()).copy_from(alpha);
        t
    }
}

impl SplitProblem for RalSplit<'_> {
    fn forward(&mut self, t: &DVector<f64>) -> Result<DVector<f64>> {
        let (x, alpha) = self.split(t);
        let c = build_ck(self.problem, &alpha);
        let mut bx = x.zeros_like();
        bx.lifted = -c.g;
        bx.p = -c.p;
        bx.q = -c.q;
        Ok(Self::join(&bx, &grad_alpha(self.problem, &x, &alpha)))
    }

    fn resolvent(&mut self, t: &DVector<f64>, gamma: f64, _outer: usize, last_residual: f64) -> Result<DVector<f64>> {
        let rho = 1.0 / gamma;
        if self.solver.as_ref().is_none_or(|s| s.rho != rho) {
            self.solver = Some(ProxSolver::new(self.problem, self.q_metric.clone(), rho)?.accepting_stalls());
            self.dual = None;
        }
        let solver = self.solver.as_ref().unwrap();
        let (center, alpha) = self.split(t);
        let c = LinearBundle::zeros(self.problem);
        let input = ProxInput { center: &center, c: &c };
        let out = solver.solve(self.problem, input, self.dual.as_ref(), self.cfg.inner_tol(last_residual), self.cfg.max_inner)?;
        self.last_kkt = out.residual;
        self.last_inner = out.iterations;
        self.inner_total += out.iterations;
        self.dual = Some(out.dual);
        Ok(Self::join(&out.x, &alpha.map(|a| a.clamp(0.0, 1.0))))
    }

    fn project(&mut self, t: &DVector<f64>) -> Result<DVector<f64>> {
        let (x, alpha) = self.split(t);
        let x = project_simple(&self.poly, &x)?;
        Ok(Self::join(&x, &alpha.map(|a| a.clamp(0.0, 1.0))))
    }

    fn diagnostics(&mut self, t: &DVector<f64>) -> (f64, f64, usize) {
        let (x, alpha) = self.split(t);
        (objective(self.problem, &x, &alpha), self.last_kkt, self.last_inner)
    }
}

pub fn tseng_solve(problem: &RalProblem, cfg: &SolverConfig, warm: Option<&WarmStartState>) -> Result<SolveOutcome> {
    cfg.validate()?;
    let lipschitz = lipschitz_of(problem, cfg)?;
    let gamma = cfg.gamma.unwrap_or(0.9 / (lipschitz.0 + lipschitz.1).max(1e-9));
    let (start, dual) = start_of(problem, warm)?;
    let mut split = RalSplit {
        problem,
        template: start.x.clone(),
        q_metric: q_metric_of(problem, cfg)?,
        poly: Polytope::for_problem(problem),
        cfg,
        solver: None,
        dual,
        last_kkt: f64::NAN,
        last_inner: 0,
        inner_total: 0,
    };
    split.solver = Some(ProxSolver::new(problem, split.q_metric.clone(), 1.0 / gamma)?.accepting_stalls());
    let t0 = RalSplit::join(&start.x, &start.alpha);
    let settings = TsengSettings { gamma, tol: cfg.tol_fixed_point, max_iter: cfg.max_outer, record_timing: cfg.record_timing };
    let out = tseng(&mut split, &t0, settings)?;
    let (x, alpha) = split.split(&out.t);
    let dual = split.dual.clone().unwrap_or_else(|| DualIterate::zeros(problem));
    Ok(SolveOutcome {
        objective: objective(problem, &x, &alpha),
        point: SaddlePoint { x, alpha },
        dual,
        trace: out.trace,
        iterations: out.iterations,
        inner_iterations: split.inner_total,
        accumulator: None,
        lipschitz,
    })
}

/// Accelerated method on the smoothed α-problem inside a proximal-point
/// loop over `(x_st, α_st)`.
pub fn nesterov_solve(problem: &RalProblem, cfg: &SolverConfig, warm: Option<&WarmStartState>) -> Result<SolveOutcome> {
    cfg.validate()?;
    let clock = Instant::now();
    let lipschitz = lipschitz_of(problem, cfg)?;
    let (l_aa, l_ax) = lipschitz;
    let rho = cfg.rho.unwrap_or(l_ax.max(1e-3));
    let l = 2.0 * (l_aa + l_ax * l_ax / rho);
    let solver = ProxSolver::new(problem, q_metric_of(problem, cfg)?, rho)?.accepting_stalls();
    let (start, mut dual) = start_of(problem, warm)?;
    let template = start.x.clone();
    let mut x_st = start.x;
    let mut alpha_st = start.alpha;
    let mut trace = Vec::new();
    let mut calls = 0usize;
    let mut inner_total = 0usize;
    let mut last_residual = f64::INFINITY;
    for k in 1..=cfg.max_outer {
        let tol = cfg.inner_tol(last_residual);
        let mut last: Option<ProxOutput> = None;
        let mut last_inner = 0;
        let settings = NesterovSettings {
            rho,
            lipschitz: l,
            lo: 0.0,
            hi: 1.0,
            max_iter: cfg.max_inner.min(500),
            tol: (0.1 * last_residual).min(1e-4).max(0.1 * cfg.tol_fixed_point),
        };
        let out = {
            let mut oracle = |alpha: &DVector<f64>| -> Result<OracleAnswer> {
                let c = build_ck(problem, alpha);
                let warm_dual = last.as_ref().map(|o| &o.dual).or(dual.as_ref());
                let o = solver.solve(problem, ProxInput { center: &x_st, c: &c }, warm_dual, tol, cfg.max_inner)?;
                calls += 1;
                last_inner += o.iterations;
                let grad = grad_alpha(problem, &o.x, alpha);
                let aux = o.x.pack();
                last = Some(o);
                Ok(OracleAnswer { grad, aux })
            };
            accelerated_composite(&mut oracle, &alpha_st, settings)?
        };
        inner_total += last_inner;
        let x_next = template.unpack(out.x_hat.as_slice());
        let step = (x_next.dist_sq(&x_st, &solver.q_metric) + (&out.beta - &alpha_st).norm_squared()).sqrt();
        let scale = (x_st.pack().norm_squared() + alpha_st.norm_squared()).sqrt().max(1.0);
        let residual = step / scale;
        last_residual = residual;
        let kkt_max = match &last {
            Some(o) => {
                let c = build_ck(problem, &out.beta);
                kkt_residual(problem, &solver, ProxInput { center: &x_st, c: &c }, &o.x, &o.dual)
                    .map_or(f64::NAN, |r| r.primal)
            }
            None => f64::NAN,
        };
        if let Some(o) = last {
            dual = Some(o.dual);
        }
        x_st = x_next;
        alpha_st = out.beta;
        trace.push(TraceRecord {
            iter: k,
            objective: objective(problem, &x_st, &alpha_st),
            fixed_point_residual: residual,
            kkt_max,
            inner_iters: last_inner,
            wall_ms: if cfg.record_timing { clock.elapsed().as_millis() as u64 } else { 0 },
        });
        if residual <= cfg.tol_fixed_point {
            return Ok(SolveOutcome {
                objective: objective(problem, &x_st, &alpha_st),
                point: SaddlePoint { x: x_st, alpha: alpha_st },
                dual: dual.unwrap_or_else(|| DualIterate::zeros(problem)),
                trace,
                iterations: calls,
                inner_iterations: inner_total,
                accumulator: Some(out.accumulator),
                lipschitz,
            });
        }
    }
    let residual = trace.last().map_or(f64::INFINITY, |r| r.fixed_point_residual);
    Err(Error::Budget {
        what: "accelerated proximal-point method",
        iterations: cfg.max_outer,
        residual,
        trace: trace.iter().map(|r| r.fixed_point_residual).collect(),
    })
}

/// Runs the solver selected by `cfg.kind`.
pub fn solve(problem: &RalProblem, cfg: &SolverConfig, warm: Option<&WarmStartState>) -> Result<SolveOutcome> {
    match cfg.kind {
        SolverKind::Tseng => tseng_solve(problem, cfg, warm),
        SolverKind::Nesterov => nesterov_solve(problem, cfg, warm),
    }
}
