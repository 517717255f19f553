//! The relaxed robust active-learning saddle problem.
//!
//! Lifted matrix layout, with `n` data points and `m` query candidates:
//! rows `0..n` are data, `n..n+m` the query block (candidate order), and the
//! last row/column `c = n+m` is the corner whose column holds the lift
//! vector `[v; q_Q]`. The data block `Ĝ_D` is the leading `n×n` block.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::operators::{ConstraintOperators, Row, RowClass, RowKey};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernel::GramPair;
use crate::qp::BoxQp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Full,
    /// Complex classifier pinned to zero.
    Lite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RalConfig {
    #[serde(default = "one")]
    pub lambda: f64,
    #[serde(default = "one")]
    pub lambda_o: f64,
    #[serde(default = "one")]
    pub c_a: f64,
    #[serde(default = "one_usize")]
    pub b: usize,
    #[serde(default = "one_usize")]
    pub n_o: usize,
    /// Cap on noisy labeled instances; defaults to `n_o`.
    #[serde(default)]
    pub n_lbn: Option<usize>,
    #[serde(default)]
    pub mode: Mode,
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

impl Default for RalConfig {
    fn default() -> Self {
        RalConfig { lambda: 1.0, lambda_o: 1.0, c_a: 1.0, b: 1, n_o: 1, n_lbn: None, mode: Mode::Full }
    }
}

impl RalConfig {
    pub fn n_lbn(&self) -> usize {
        self.n_lbn.unwrap_or(self.n_o)
    }

    pub fn validate(&self, n: usize, candidates: usize) -> Result<()> {
        if !(self.lambda > 0.0) || !(self.lambda_o > 0.0) {
            return Err(Error::Config("lambda and lambda_o must be positive".into()));
        }
        if !(self.c_a >= 0.0) {
            return Err(Error::Config("c_a must be nonnegative".into()));
        }
        if self.b > candidates {
            return Err(Error::Config(format!(
                "batch size {} exceeds the {} query candidates",
                self.b, candidates
            )));
        }
        if self.n_o + self.b > n {
            return Err(Error::Config(format!(
                "n_o + b = {} exceeds n = {}",
                self.n_o + self.b,
                n
            )));
        }
        Ok(())
    }
}

/// Primal block `x = (G, p, q, β, s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primal {
    /// Full lifted matrix `[Ĝ, z; zᵀ, 1]`.
    pub lifted: DMatrix<f64>,
    pub p: DVector<f64>,
    pub q: DVector<f64>,
    pub beta: DVector<f64>,
    pub s: DVector<f64>,
}

impl Primal {
    pub fn zeros_like(&self) -> Primal {
        Primal {
            lifted: DMatrix::zeros(self.lifted.nrows(), self.lifted.ncols()),
            p: DVector::zeros(self.p.len()),
            q: DVector::zeros(self.q.len()),
            beta: DVector::zeros(self.beta.len()),
            s: DVector::zeros(self.s.len()),
        }
    }

    pub fn packed_len(&self) -> usize {
        self.lifted.len() + self.p.len() + self.q.len() + self.beta.len() + self.s.len()
    }

    /// Flat vector; `lifted` is stored column-major.
    pub fn pack(&self) -> DVector<f64> {
        let mut v = Vec::with_capacity(self.packed_len());
        v.extend(self.lifted.iter());
        v.extend(self.p.iter());
        v.extend(self.q.iter());
        v.extend(self.beta.iter());
        v.extend(self.s.iter());
        DVector::from_vec(v)
    }

    /// Inverse of [`Primal::pack`], using `self` for the shapes.
    pub fn unpack(&self, v: &[f64]) -> Primal {
        let d = self.lifted.nrows();
        let n = self.p.len();
        let mut at = 0;
        let mut take = |len: usize| {
            let s = &v[at..at + len];
            at += len;
            s
        };
        Primal {
            lifted: DMatrix::from_column_slice(d, d, take(d * d)),
            p: DVector::from_column_slice(take(n)),
            q: DVector::from_column_slice(take(n)),
            beta: DVector::from_column_slice(take(n)),
            s: DVector::from_column_slice(take(self.s.len())),
        }
    }

    /// Euclidean norm of the difference, with the β block in the `Q` metric.
    pub fn dist_sq(&self, other: &Primal, q_metric: &DMatrix<f64>) -> f64 {
        let db = &self.beta - &other.beta;
        (&self.lifted - &other.lifted).norm_squared()
            + (&self.p - &other.p).norm_squared()
            + (&self.q - &other.q).norm_squared()
            + db.dot(&(q_metric * &db))
            + (&self.s - &other.s).norm_squared()
    }
}

/// Primal block together with the dual variable α.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddlePoint {
    pub x: Primal,
    pub alpha: DVector<f64>,
}

/// Assembled problem: data-dependent constants, operators and bounds.
#[derive(Debug, Clone)]
pub struct RalProblem {
    pub cfg: RalConfig,
    pub n: usize,
    pub m: usize,
    /// Labels as reals, 0 for unlabeled.
    pub y: DVector<f64>,
    pub labeled: Vec<bool>,
    /// Candidate data indices in query-block order.
    pub candidates: Vec<usize>,
    pub k: DMatrix<f64>,
    pub k_o: DMatrix<f64>,
    pub ops: ConstraintOperators,
    pub p_ub: DVector<f64>,
    pub q_ub: DVector<f64>,
    /// Required value of `1ᵀq`.
    pub q_sum: f64,
}

impl RalProblem {
    /// Side of the lifted matrix.
    pub fn dim(&self) -> usize {
        self.n + self.m + 1
    }

    pub fn corner(&self) -> usize {
        self.n + self.m
    }

    pub fn n_labeled(&self) -> usize {
        self.labeled.iter().filter(|&&l| l).count()
    }

    pub fn g_data<'a>(&self, x: &'a Primal) -> nalgebra::DMatrixView<'a, f64> {
        x.lifted.view((0, 0), (self.n, self.n))
    }

    /// `Ĝ`, the lifted matrix without the corner row and column.
    pub fn g_hat(&self, x: &Primal) -> DMatrix<f64> {
        x.lifted.view((0, 0), (self.n + self.m, self.n + self.m)).into_owned()
    }

    /// `a = 1 − p − q`.
    pub fn a(&self, x: &Primal) -> DVector<f64> {
        DVector::from_element(self.n, 1.0) - &x.p - &x.q
    }

    /// `g = p + q`.
    pub fn g(&self, x: &Primal) -> DVector<f64> {
        &x.p + &x.q
    }

    /// Lift entries of the unlabeled data points, the relaxed `y_u` block.
    pub fn tau(&self, x: &Primal) -> DVector<f64> {
        let c = self.corner();
        let u: Vec<f64> = (0..self.n).filter(|&i| !self.labeled[i]).map(|i| x.lifted[(i, c)]).collect();
        DVector::from_vec(u)
    }

    /// The lift column `[v; q_Q]`.
    pub fn lift(&self, x: &Primal) -> DVector<f64> {
        let c = self.corner();
        DVector::from_fn(self.n + self.m, |i, _| x.lifted[(i, c)])
    }

    /// Complex-classifier values `K_o β` at the data points.
    pub fn f_o(&self, x: &Primal) -> DVector<f64> {
        &self.k_o * &x.beta
    }
}

/// Assembles the full or lite problem according to `cfg.mode`.
pub fn assemble(data: &Dataset, gram: &GramPair, cfg: &RalConfig) -> Result<(RalProblem, SaddlePoint)> {
    if data.candidate_idx.is_empty() {
        return Err(Error::Config("no query candidates".into()));
    }
    if cfg.b == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    for class in [1i8, -1] {
        if !data.labeled_idx.iter().any(|&i| data.labels[i] == Some(class)) {
            return Err(Error::Config(format!("no labeled instance of class {class}")));
        }
    }
    build(data, gram, cfg)
}

/// Lite variant: complex classifier pinned at zero and `p = 0`.
pub fn ral_lite(data: &Dataset, gram: &GramPair, cfg: &RalConfig) -> Result<(RalProblem, SaddlePoint)> {
    let cfg = RalConfig { mode: Mode::Lite, ..cfg.clone() };
    assemble(data, &gram.clone(), &cfg)
}

/// Fully labeled variant with no queries, used by the Simple-Complex
/// relaxation. `c_a` and `b` are ignored.
pub fn assemble_supervised(data: &Dataset, gram: &GramPair, cfg: &RalConfig) -> Result<(RalProblem, SaddlePoint)> {
    if !data.unlabeled_idx.is_empty() {
        return Err(Error::Contract("supervised problem needs every instance labeled".into()));
    }
    let cfg = RalConfig { c_a: 0.0, b: 0, n_lbn: Some(cfg.n_o), ..cfg.clone() };
    let data = data.clone().with_candidates(vec![])?;
    build(&data, gram, &cfg)
}

fn build(data: &Dataset, gram: &GramPair, cfg: &RalConfig) -> Result<(RalProblem, SaddlePoint)> {
    let n = data.n();
    if gram.n() != n {
        return Err(Error::Contract(format!("Gram matrices are {}×{}, data has {n} rows", gram.n(), gram.n())));
    }
    cfg.validate(n, data.candidate_idx.len())?;
    let m = data.candidate_idx.len();
    let dim = n + m + 1;
    let c = n + m;
    let full = cfg.mode == Mode::Full;
    let y = DVector::from_fn(n, |i, _| data.y(i));
    let labeled: Vec<bool> = (0..n).map(|i| data.is_labeled(i)).collect();

    let mut rows: Vec<(Row, Option<DVector<f64>>)> = Vec::new();
    let row = |key, class, g: Vec<(usize, usize, f64)>, p: Vec<(usize, f64)>, q: Vec<(usize, f64)>, rhs| Row {
        key,
        class,
        g,
        p,
        q,
        rhs,
    };
    rows.push((row(RowKey::Corner, RowClass::Ec, vec![(c, c, 1.0)], vec![], vec![], 1.0), None));
    for i in 0..n {
        rows.push((
            row(RowKey::DataDiag(i), RowClass::Ec, vec![(i, i, 1.0)], vec![(i, 1.0)], vec![(i, 1.0)], 1.0),
            None,
        ));
    }
    for (k, &i) in data.candidate_idx.iter().enumerate() {
        let r = n + k;
        rows.push((row(RowKey::QueryDiag(i), RowClass::Ec, vec![(r, r, 1.0)], vec![], vec![(i, -1.0)], 0.0), None));
        rows.push((row(RowKey::QueryLift(i), RowClass::Ec, vec![(r, c, 1.0)], vec![], vec![(i, -1.0)], 0.0), None));
    }
    for &i in &data.labeled_idx {
        let yi = y[i];
        rows.push((row(RowKey::LabeledLift(i), RowClass::Ec, vec![(i, c, 1.0)], vec![(i, yi)], vec![], yi), None));
        if full {
            let e = gram.k_o.row(i).transpose() * yi;
            rows.push((row(RowKey::Coupling(i), RowClass::Ev, vec![(i, i, 1.0)], vec![], vec![], 1.0), Some(e)));
        }
    }
    for &i in &data.unlabeled_idx {
        rows.push((row(RowKey::LiftUpper(i), RowClass::Ic, vec![(i, i, 1.0), (i, c, -1.0)], vec![], vec![], 0.0), None));
        rows.push((row(RowKey::LiftLower(i), RowClass::Ic, vec![(i, i, 1.0), (i, c, 1.0)], vec![], vec![], 0.0), None));
    }
    if full {
        for i in 0..n {
            let ko = gram.k_o.row(i).transpose();
            rows.push((row(RowKey::NoiseUpper(i), RowClass::Iv, vec![], vec![(i, 1.0)], vec![], 0.0), Some(-&ko)));
            rows.push((row(RowKey::NoiseLower(i), RowClass::Iv, vec![], vec![(i, 1.0)], vec![], 0.0), Some(ko)));
        }
        for &i in &data.unlabeled_idx {
            let ko = gram.k_o.row(i).transpose();
            rows.push((row(RowKey::QueryUpper(i), RowClass::Iv, vec![], vec![], vec![(i, -1.0)], -1.0), Some(-&ko)));
            rows.push((row(RowKey::QueryLower(i), RowClass::Iv, vec![], vec![], vec![(i, -1.0)], -1.0), Some(ko)));
        }
    }
    let ops = ConstraintOperators::new(rows, dim, n);

    let p_ub = DVector::from_element(n, if full { 1.0 } else { 0.0 });
    let mut q_ub = DVector::zeros(n);
    for &i in &data.candidate_idx {
        q_ub[i] = 1.0;
    }
    let problem = RalProblem {
        cfg: cfg.clone(),
        n,
        m,
        y,
        labeled,
        candidates: data.candidate_idx.clone(),
        k: gram.k.clone(),
        k_o: gram.k_o.clone(),
        ops,
        p_ub,
        q_ub,
        q_sum: cfg.b as f64,
    };
    let start = initial_point(&problem);
    Ok((problem, start))
}

/// Feasible starting point: uniform `q` over candidates, `p = 0`, `β = 0`,
/// `α = ½` and the diagonal PSD completion `zzᵀ + diag(d − z²)`.
pub fn initial_point(problem: &RalProblem) -> SaddlePoint {
    let n = problem.n;
    let mut q = DVector::zeros(n);
    if problem.m > 0 {
        for &i in &problem.candidates {
            q[i] = problem.q_sum / problem.m as f64;
        }
    }
    let p = DVector::zeros(n);
    let x = completion(problem, &p, &q, &DVector::zeros(n));
    SaddlePoint { x, alpha: DVector::from_element(n, 0.5) }
}

/// Builds the diagonal PSD completion for given `p`, `q`, `β`, lift values
/// from the labels, and slacks from the rows.
pub fn completion(problem: &RalProblem, p: &DVector<f64>, q: &DVector<f64>, beta: &DVector<f64>) -> Primal {
    let n = problem.n;
    let d = problem.dim();
    let c = problem.corner();
    let mut z = DVector::zeros(d);
    let mut diag = DVector::zeros(d);
    for i in 0..n {
        let a = 1.0 - p[i] - q[i];
        diag[i] = a;
        z[i] = if problem.labeled[i] { problem.y[i] * a } else { 0.0 };
    }
    for (k, &i) in problem.candidates.iter().enumerate() {
        diag[n + k] = q[i];
        z[n + k] = q[i];
    }
    z[c] = 1.0;
    diag[c] = 1.0;
    let mut lifted = &z * z.transpose();
    for i in 0..d {
        lifted[(i, i)] = diag[i];
    }
    let mut x = Primal {
        lifted,
        p: p.clone(),
        q: q.clone(),
        beta: beta.clone(),
        s: DVector::zeros(problem.ops.n_ineq()),
    };
    x.s = slack_values(problem, &x);
    x
}

/// Row values of the inequality rows, clamped at zero.
pub fn slack_values(problem: &RalProblem, x: &Primal) -> DVector<f64> {
    let ops = &problem.ops;
    let vals = ops.apply_u(&x.lifted, &x.p, &x.q) + ops.apply_beta(&x.beta) - ops.rhs();
    DVector::from_iterator(ops.n_ineq(), vals.iter().skip(ops.n_eq).map(|v| v.max(0.0)))
}

/// Signed row residuals: `row(x) − b`, minus `s` on inequality rows.
pub fn row_residual(problem: &RalProblem, x: &Primal) -> DVector<f64> {
    let ops = &problem.ops;
    let mut r = ops.apply_u(&x.lifted, &x.p, &x.q) + ops.apply_beta(&x.beta) - ops.rhs();
    for k in 0..ops.n_ineq() {
        r[ops.n_eq + k] -= x.s[k];
    }
    r
}

/// `K ⊙ Ĝ_D`.
pub fn k_hadamard_g(problem: &RalProblem, x: &Primal) -> DMatrix<f64> {
    problem.k.component_mul(&problem.g_data(x))
}

/// `−f(x, α)`, without the constant `c_a·n`.
pub fn objective(problem: &RalProblem, x: &Primal, alpha: &DVector<f64>) -> f64 {
    let cfg = &problem.cfg;
    let kg = k_hadamard_g(problem, x);
    let pq = &x.p + &x.q;
    alpha.sum() - (alpha.add_scalar(cfg.c_a)).dot(&pq) + 0.5 * cfg.lambda_o * x.beta.dot(&(&problem.k_o * &x.beta))
        - alpha.dot(&(kg * alpha)) / (2.0 * cfg.lambda)
}

/// `∇_α f = −a + (1/λ)(K ⊙ Ĝ_D) α`.
pub fn grad_alpha(problem: &RalProblem, x: &Primal, alpha: &DVector<f64>) -> DVector<f64> {
    let kg = k_hadamard_g(problem, x);
    -problem.a(x) + kg * alpha / problem.cfg.lambda
}

/// Linear coefficients of `u` in `f` at fixed α, so that
/// `−f = const − ⟨c, u⟩ + (λ_o/2) βᵀK_oβ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearBundle {
    /// Lifted-matrix coefficient, nonzero on the data block only.
    pub g: DMatrix<f64>,
    pub p: DVector<f64>,
    pub q: DVector<f64>,
}

impl LinearBundle {
    pub fn zeros(problem: &RalProblem) -> Self {
        LinearBundle {
            g: DMatrix::zeros(problem.dim(), problem.dim()),
            p: DVector::zeros(problem.n),
            q: DVector::zeros(problem.n),
        }
    }

    pub fn dot(&self, x: &Primal) -> f64 {
        self.g.dot(&x.lifted) + self.p.dot(&x.p) + self.q.dot(&x.q)
    }
}

pub fn build_ck(problem: &RalProblem, alpha: &DVector<f64>) -> LinearBundle {
    let n = problem.n;
    let mut g = DMatrix::zeros(problem.dim(), problem.dim());
    let scale = 1.0 / (2.0 * problem.cfg.lambda);
    for i in 0..n {
        for j in 0..n {
            g[(i, j)] = scale * problem.k[(i, j)] * alpha[i] * alpha[j];
        }
    }
    let w = alpha.add_scalar(problem.cfg.c_a);
    // q is fixed at zero outside the candidates; keep the bundle sparse there.
    let q = DVector::from_fn(n, |i, _| if problem.q_ub[i] > 0.0 { w[i] } else { 0.0 });
    LinearBundle { g, p: w, q }
}

/// `max_α −f(x, α)` over the box, with its maximizer.
pub fn primal_value(problem: &RalProblem, x: &Primal, warm: Option<&DVector<f64>>) -> (f64, DVector<f64>) {
    let n = problem.n;
    let cfg = &problem.cfg;
    let h = k_hadamard_g(problem, x) / cfg.lambda;
    let h = (&h + h.transpose()) * 0.5;
    let w = problem.a(x);
    let lo = DVector::zeros(n);
    let hi = DVector::from_element(n, 1.0);
    let sol = BoxQp { h: &h, w: &w, lo: &lo, hi: &hi }.solve(warm, 1e-13);
    let constant = -cfg.c_a * (x.p.sum() + x.q.sum()) + 0.5 * cfg.lambda_o * x.beta.dot(&(&problem.k_o * &x.beta));
    (sol.value + constant, sol.alpha)
}

/// Query selection outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySelection {
    pub indices: Vec<usize>,
    /// True when fewer than `b` candidates were eligible.
    pub short: bool,
}

/// Top-`b` candidates by relaxed `q`, skipping suspected noisy points.
pub fn select_queries(problem: &RalProblem, x: &Primal) -> QuerySelection {
    let mut eligible: Vec<usize> = problem.candidates.iter().copied().filter(|&i| x.p[i] < 0.5).collect();
    eligible.sort_by(|&a, &b| x.q[b].total_cmp(&x.q[a]).then(a.cmp(&b)));
    let b = problem.cfg.b;
    let short = eligible.len() < b;
    if short {
        log::warn!("only {} eligible query candidates for a batch of {b}", eligible.len());
    }
    eligible.truncate(b);
    QuerySelection { indices: eligible, short }
}
