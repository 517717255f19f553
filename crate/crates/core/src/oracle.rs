//! Brute-force reference solvers for tiny instances.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernel::GramPair;
use crate::ral::{Mode, RalConfig, RalProblem};
use crate::simple_complex::{subset_objective, weighted_svm};
use crate::solver::project::{project_box_sum, project_psd, Polytope};
use crate::solver::prox::ProxSolver;
use crate::ral::{LinearBundle, Primal};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnumerationBudget {
    pub max_n: usize,
    pub max_states: u128,
}

impl Default for EnumerationBudget {
    fn default() -> Self {
        EnumerationBudget { max_n: 8, max_states: 2_000_000 }
    }
}

/// Order of the label quantifiers in the minimax query problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ordering {
    /// `min_S max_{y_s} min_{y_u, p}`.
    #[default]
    WorstQueryLabel,
    /// `min_S min_{y_u} max_{y_s} min_p`.
    Exchanged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RalExactResult {
    pub query: Vec<usize>,
    /// Labels of the unlabeled, unqueried points at the optimum.
    pub y_u: Vec<(usize, i8)>,
    /// Points flagged noisy at the optimum.
    pub p: Vec<usize>,
    pub value: f64,
    /// Minimax value of every query set, in enumeration order.
    pub per_query: Vec<(Vec<usize>, f64)>,
    pub states: u128,
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// All `k`-subsets of `items` in lexicographic order.
fn subsets(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    fn rec(items: &[usize], k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for j in start..items.len() {
            cur.push(items[j]);
            rec(items, k, j + 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(items, k, 0, &mut Vec::new(), &mut out);
    out
}

/// Noise sets allowed next to query set `s`.
fn noise_sets(n: usize, s: &[usize], labeled: &[bool], cfg: &RalConfig) -> Vec<Vec<usize>> {
    if cfg.mode == Mode::Lite {
        return vec![vec![]];
    }
    let free: Vec<usize> = (0..n).filter(|i| !s.contains(i)).collect();
    let mut out = Vec::new();
    for k in 0..=cfg.n_o.min(free.len()) {
        for o in subsets(&free, k) {
            if o.iter().filter(|&&i| labeled[i]).count() <= cfg.n_lbn() {
                out.push(o);
            }
        }
    }
    out
}

struct Evaluator<'a> {
    gram: &'a GramPair,
    cfg: &'a RalConfig,
    labeled: Vec<bool>,
    k_o_chol: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
}

impl Evaluator<'_> {
    /// Objective of one integral assignment: SVM over all points with the
    /// noisy ones removed, minus the `c_a` rewards, plus the norm of the
    /// complex function matching `y` on noisy labeled points.
    fn value(&self, y: &DVector<f64>, noisy: &[usize], b: usize) -> f64 {
        let n = y.len();
        let mut c = DVector::from_element(n, 1.0);
        let mut t = DVector::zeros(n);
        for &i in noisy {
            c[i] = 0.0;
            if self.labeled[i] {
                t[i] = y[i];
            }
        }
        let (_, svm) = weighted_svm(&self.gram.k, y, &c, self.cfg.lambda);
        let norm = match &self.k_o_chol {
            Some(ch) if t.amax() > 0.0 => t.dot(&ch.solve(&t)),
            _ => 0.0,
        };
        svm - self.cfg.c_a * (noisy.len() + b) as f64 + 0.5 * self.cfg.lambda_o * norm
    }
}

fn sign_vectors(len: usize) -> impl Iterator<Item = Vec<f64>> {
    (0u64..(1u64 << len)).map(move |mask| (0..len).map(|j| if mask & (1 << j) != 0 { -1.0 } else { 1.0 }).collect())
}

/// Exact minimax query selection by enumeration.
pub fn ral_exact(
    data: &Dataset,
    gram: &GramPair,
    cfg: &RalConfig,
    budget: &EnumerationBudget,
    ordering: Ordering,
) -> Result<RalExactResult> {
    let n = data.n();
    let m = data.candidate_idx.len();
    cfg.validate(n, m)?;
    if cfg.b == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let u = data.unlabeled_idx.len();
    let free = n - cfg.b;
    let noise: u128 = if cfg.mode == Mode::Lite { 1 } else { (0..=cfg.n_o.min(free)).map(|k| binomial(free, k)).sum() };
    let states = binomial(m, cfg.b).saturating_mul(1u128 << u.min(120)).saturating_mul(noise);
    if n > budget.max_n || states > budget.max_states {
        return Err(Error::Enumeration { count: states, cap: budget.max_states });
    }
    let labeled: Vec<bool> = (0..n).map(|i| data.is_labeled(i)).collect();
    let k_o_chol = if cfg.mode == Mode::Full {
        Some(gram.k_o.clone().cholesky().ok_or_else(|| Error::Numeric("complex Gram matrix is singular".into()))?)
    } else {
        None
    };
    let ev = Evaluator { gram, cfg, labeled: labeled.clone(), k_o_chol };

    let mut best: Option<RalExactResult> = None;
    let mut per_query = Vec::new();
    for s in subsets(&data.candidate_idx, cfg.b) {
        let rest: Vec<usize> = data.unlabeled_idx.iter().copied().filter(|i| !s.contains(i)).collect();
        let noisy_sets = noise_sets(n, &s, &labeled, cfg);
        let mut y = DVector::from_fn(n, |i, _| data.y(i));
        // inner[a][b]: min over p for query labels `a` and rest labels `b`.
        let mut inner: Vec<Vec<(f64, Vec<usize>)>> = Vec::new();
        for ys in sign_vectors(s.len()) {
            for (j, &i) in s.iter().enumerate() {
                y[i] = ys[j];
            }
            let mut row = Vec::new();
            for yu in sign_vectors(rest.len()) {
                for (j, &i) in rest.iter().enumerate() {
                    y[i] = yu[j];
                }
                let mut best_p: Option<(f64, Vec<usize>)> = None;
                for o in &noisy_sets {
                    let v = ev.value(&y, o, cfg.b);
                    if best_p.as_ref().is_none_or(|b| v < b.0) {
                        best_p = Some((v, o.clone()));
                    }
                }
                row.push(best_p.expect("the empty noise set is always allowed"));
            }
            inner.push(row);
        }
        let n_ys = inner.len();
        let n_yu = inner[0].len();
        // (value, ys index, yu index)
        let (value, a_idx, b_idx) = match ordering {
            Ordering::WorstQueryLabel => {
                let mut worst: Option<(f64, usize, usize)> = None;
                for a in 0..n_ys {
                    let (bi, bv) = (0..n_yu).map(|b| (b, inner[a][b].0)).fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
                    if worst.is_none_or(|w| bv > w.0) {
                        worst = Some((bv, a, bi));
                    }
                }
                worst.unwrap()
            }
            Ordering::Exchanged => {
                let mut best_b: Option<(f64, usize, usize)> = None;
                for b in 0..n_yu {
                    let (ai, av) = (0..n_ys).map(|a| (a, inner[a][b].0)).fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
                    if best_b.is_none_or(|w| av < w.0) {
                        best_b = Some((av, ai, b));
                    }
                }
                best_b.unwrap()
            }
        };
        per_query.push((s.clone(), value));
        if best.as_ref().is_none_or(|b| value < b.value) {
            let yu: Vec<f64> = sign_vectors(rest.len()).nth(b_idx).unwrap();
            let _ = a_idx;
            best = Some(RalExactResult {
                query: s.clone(),
                y_u: rest.iter().zip(&yu).map(|(&i, &v)| (i, v as i8)).collect(),
                p: inner[a_idx][b_idx].1.clone(),
                value,
                per_query: Vec::new(),
                states,
            });
        }
    }
    let mut out = best.expect("at least one query set exists");
    out.per_query = per_query;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rank1Report {
    pub grid_points: usize,
    pub feasible_points: usize,
    pub grid_min: f64,
    pub argmin_beta: Vec<f64>,
    pub relaxation: f64,
    /// `grid_min − relaxation`; nonnegative up to solver accuracy.
    pub gap: f64,
}

/// Evaluates the rank-one objective `SVM(h) + (λ_o/2)βᵀK_oβ`, with
/// `h = 1 − Y K_o β`, on a grid over `β ∈ [−1, 1]ⁿ` and compares the
/// minimum with a relaxation value. Grid points violating `0 ≤ y_i f_o(x_i) ≤ 1`
/// or `Σ y_i f_o(x_i) ≤ n_o` are skipped.
pub fn rank1_verify(
    data: &Dataset,
    gram: &GramPair,
    lambda: f64,
    lambda_o: f64,
    n_o: usize,
    grid: usize,
    relaxation: f64,
) -> Result<Rank1Report> {
    let n = data.n();
    if n > 4 {
        return Err(Error::Enumeration { count: (grid as u128).pow(n as u32), cap: (grid as u128).pow(4) });
    }
    if grid == 0 || !data.unlabeled_idx.is_empty() {
        return Err(Error::Contract("grid must be nonempty and every instance labeled".into()));
    }
    let y = DVector::from_fn(n, |i, _| data.y(i));
    let values: Vec<f64> = if grid == 1 {
        vec![0.0]
    } else {
        (0..grid).map(|k| -1.0 + 2.0 * k as f64 / (grid - 1) as f64).collect()
    };
    let total = grid.pow(n as u32);
    let mut best = (f64::INFINITY, vec![0.0; n]);
    let mut feasible = 0;
    for idx in 0..total {
        let mut r = idx;
        let beta = DVector::from_fn(n, |_, _| {
            let v = values[r % grid];
            r /= grid;
            v
        });
        let fo = &gram.k_o * &beta;
        let p = y.component_mul(&fo);
        if p.min() < -1e-12 || p.max() > 1.0 + 1e-12 || p.sum() > n_o as f64 + 1e-12 {
            continue;
        }
        feasible += 1;
        let h = p.map(|v| 1.0 - v);
        let (_, svm) = weighted_svm(&gram.k, &y, &h, lambda);
        let v = svm + 0.5 * lambda_o * beta.dot(&(&gram.k_o * &beta));
        if v < best.0 {
            best = (v, beta.iter().copied().collect());
        }
    }
    Ok(Rank1Report {
        grid_points: total,
        feasible_points: feasible,
        grid_min: best.0,
        argmin_beta: best.1,
        relaxation,
        gap: best.0 - relaxation,
    })
}

/// Local search for the nonconvex Simple-Complex problem over continuous
/// `p`: alternates the exact SVM in α with a projected gradient step in
/// `p`, from `restarts` random feasible starts. Returns the best value,
/// an upper bound on the continuous optimum.
pub fn sc_alternating(
    data: &Dataset,
    gram: &GramPair,
    lambda: f64,
    lambda_o: f64,
    n_o: usize,
    restarts: usize,
    seed: u64,
) -> Result<(f64, DVector<f64>)> {
    let n = data.n();
    if !data.unlabeled_idx.is_empty() {
        return Err(Error::Contract("every instance must be labeled".into()));
    }
    let y = DVector::from_fn(n, |i, _| data.y(i));
    let k_o_inv = gram
        .k_o
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numeric("complex Gram matrix is singular".into()))?
        .inverse();
    let ub = DVector::from_element(n, 1.0);
    let project = |v: &DVector<f64>| project_box_sum(v, &ub, n_o as f64, false);
    let value = |p: &DVector<f64>| -> (f64, DVector<f64>) {
        let h = p.map(|v| 1.0 - v);
        let (alpha, svm) = weighted_svm(&gram.k, &y, &h, lambda);
        let t = y.component_mul(p);
        (svm + 0.5 * lambda_o * t.dot(&(&k_o_inv * &t)), alpha)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, DVector<f64>)> = None;
    for r in 0..restarts.max(1) {
        let start = if r == 0 { DVector::zeros(n) } else { DVector::from_fn(n, |_, _| rng.random_range(0.0..1.0)) };
        let mut p = project(&start)?;
        let (mut v, mut alpha) = value(&p);
        let mut step = 1.0;
        for _ in 0..300 {
            // Gradient in p with α fixed.
            let ya = y.component_mul(&alpha);
            let h = p.map(|v| 1.0 - v);
            let kyah = &gram.k * ya.component_mul(&h);
            let grad = -&alpha + ya.component_mul(&kyah) / lambda + y.component_mul(&(&k_o_inv * y.component_mul(&p))) * lambda_o;
            let mut accepted = false;
            while step > 1e-10 {
                let cand = project(&(&p - &grad * step))?;
                let (cv, ca) = value(&cand);
                if cv < v - 1e-14 {
                    p = cand;
                    v = cv;
                    alpha = ca;
                    step *= 1.5;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if best.as_ref().is_none_or(|b| v < b.0) {
            best = Some((v, p));
        }
    }
    Ok(best.unwrap())
}

/// Second route to the proximal subproblem: the objective is a squared
/// distance in the metric `W = (I, Q + (λ_o/ρ)K_o, I)` to a shifted
/// center, so its solution is the `W`-projection of that center onto the
/// affine rows intersected with the cones, computed by Dykstra's method.
pub fn prox_by_dykstra(
    problem: &RalProblem,
    solver: &ProxSolver,
    center: &Primal,
    c: &LinearBundle,
    tol: f64,
    max_sweeps: usize,
) -> Result<(Primal, usize)> {
    let rho = solver.rho;
    let ops = &problem.ops;
    let w_beta = &solver.q_metric + &problem.k_o * (problem.cfg.lambda_o / rho);
    let w_chol = w_beta.clone().cholesky().ok_or_else(|| Error::Numeric("β metric is not positive definite".into()))?;
    let mut shifted = center.clone();
    shifted.lifted = &center.lifted + &c.g / rho;
    shifted.p = &center.p + &c.p / rho;
    shifted.q = &center.q + &c.q / rho;
    shifted.beta = w_chol.solve(&(&solver.q_metric * &center.beta));
    // A W⁻¹ A*: u and s parts are Euclidean, β part uses W_β⁻¹.
    let e_w = &ops.e * w_chol.solve(&ops.e.transpose());
    let mut normal = ops.gram_u() + e_w;
    for k in ops.n_eq..ops.len() {
        normal[(k, k)] += 1.0;
    }
    let normal_chol = normal
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numeric("constraint rows are linearly dependent".into()))?;
    let poly = Polytope::for_problem(problem);
    let affine = |x: &Primal| -> Primal {
        let r = crate::ral::row_residual(problem, x);
        let y = normal_chol.solve(&r);
        let (ag, ap, aq) = ops.adjoint_u(&y);
        let mut out = x.clone();
        out.lifted = &x.lifted - ag;
        out.p = &x.p - ap;
        out.q = &x.q - aq;
        out.beta = &x.beta - w_chol.solve(&ops.adjoint_beta(&y));
        for k in 0..ops.n_ineq() {
            out.s[k] = x.s[k] + y[ops.n_eq + k];
        }
        out
    };
    let cones = |x: &Primal| -> Result<Primal> {
        let (p, q) = poly.project(&x.p, &x.q)?;
        Ok(Primal { lifted: project_psd(&x.lifted)?, p, q, beta: x.beta.clone(), s: x.s.map(|v| v.max(0.0)) })
    };
    let template = shifted.pack();
    let unpack = |v: &DVector<f64>| shifted.unpack(v.as_slice());
    let mut x = template.clone();
    let mut inc_a = DVector::zeros(x.len());
    let mut inc_c = DVector::zeros(x.len());
    for sweep in 1..=max_sweeps {
        let a_in = &x + &inc_a;
        let a_out = affine(&unpack(&a_in)).pack();
        inc_a = &a_in - &a_out;
        let c_in = &a_out + &inc_c;
        let c_out = cones(&unpack(&c_in))?.pack();
        inc_c = &c_in - &c_out;
        let change = (&c_out - &x).amax();
        x = c_out;
        if change <= tol && sweep > 1 {
            let xp = unpack(&x);
            if crate::ral::row_residual(problem, &xp).amax() <= 10.0 * tol {
                return Ok((xp, sweep));
            }
        }
    }
    Err(Error::Budget { what: "Dykstra projection", iterations: max_sweeps, residual: f64::NAN, trace: vec![] })
}

/// PSD projection without an eigendecomposition: `(M + M·sign(M))/2`, with
/// `sign(M)` from the scaled Newton iteration `X ← (X + X⁻¹)/2`.
pub fn psd_projection_newton(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    let sym = (m + m.transpose()) * 0.5;
    let mut x = sym.clone();
    for _ in 0..100 {
        let inv = x.clone().try_inverse().ok_or_else(|| Error::Numeric("singular iterate in sign iteration".into()))?;
        // Determinant scaling speeds up the early iterations.
        let det = x.determinant().abs();
        let mu = if det > 0.0 { det.powf(-1.0 / n as f64) } else { 1.0 };
        let next = (&x * mu + inv / mu) * 0.5;
        let diff = (&next - &x).norm() / next.norm().max(1.0);
        x = next;
        if diff < 1e-15 {
            break;
        }
    }
    let p = (&sym + &sym * &x) * 0.5;
    Ok((&p + p.transpose()) * 0.5)
}

/// Optimality certificate of `X` as the projection of `M`: `X ⪰ 0`,
/// `X − M ⪰ 0` and `⟨X, X − M⟩ = 0`. Returns the largest violation.
pub fn psd_certificate(m: &DMatrix<f64>, x: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    let d = x - &sym;
    let e1 = crate::linalg::min_eigenvalue(x);
    let e2 = crate::linalg::min_eigenvalue(&d);
    (-e1).max(-e2).max(0.0).max(x.dot(&d).abs())
}

/// Exact Simple-Complex objective for a fixed noisy subset, re-exported for
/// oracle callers.
pub fn sc_subset_value(gram: &GramPair, y: &DVector<f64>, removed: &[usize], lambda: f64, lambda_o: f64) -> Result<f64> {
    subset_objective(gram, y, removed, lambda, lambda_o).map(|r| r.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{two_gaussians, SyntheticSpec};
    use crate::ral::{assemble, build_ck};
    use crate::simple_complex::{solve_sc_exact, solve_sc_relaxation};
    use crate::solver::prox::{default_q_metric, ProxInput};
    use crate::solver::{solve, SolverConfig};

    fn pool(n: usize, labeled: usize, seed: u64) -> (Dataset, GramPair) {
        let spec = SyntheticSpec { n, dim: 2, separation: 3.0, margin: 0.0, labeled };
        let d = two_gaussians(&spec, seed).unwrap();
        let g = GramPair::default_for(&d.features).unwrap();
        (d, g)
    }

    #[test]
    fn single_candidate_is_returned() {
        let (d, g) = pool(4, 3, 1);
        let r = ral_exact(&d, &g, &RalConfig::default(), &EnumerationBudget::default(), Ordering::default()).unwrap();
        assert_eq!(r.query, d.candidate_idx);
    }

    #[test]
    fn budget_is_enforced() {
        let (d, g) = pool(8, 2, 2);
        let budget = EnumerationBudget { max_n: 8, max_states: 10 };
        assert!(matches!(ral_exact(&d, &g, &RalConfig::default(), &budget, Ordering::default()), Err(Error::Enumeration { .. })));
        let (d, g) = pool(9, 4, 2);
        assert!(matches!(
            ral_exact(&d, &g, &RalConfig::default(), &EnumerationBudget::default(), Ordering::default()),
            Err(Error::Enumeration { .. })
        ));
    }

    #[test]
    fn exchanged_order_is_not_smaller() {
        for seed in 0..4 {
            let (d, g) = pool(4, 2, seed);
            let cfg = RalConfig::default();
            let a = ral_exact(&d, &g, &cfg, &EnumerationBudget::default(), Ordering::WorstQueryLabel).unwrap();
            let b = ral_exact(&d, &g, &cfg, &EnumerationBudget::default(), Ordering::Exchanged).unwrap();
            for ((s1, v1), (s2, v2)) in a.per_query.iter().zip(&b.per_query) {
                assert_eq!(s1, s2);
                assert!(*v1 <= v2 + 1e-12);
            }
        }
    }

    #[test]
    fn value_is_permutation_invariant() {
        let (d, g) = pool(5, 3, 3);
        let perm = [4, 2, 0, 3, 1];
        let pd = d.subset(&perm).unwrap();
        let pg = g.subset(&perm);
        let cfg = RalConfig::default();
        let a = ral_exact(&d, &g, &cfg, &EnumerationBudget::default(), Ordering::default()).unwrap();
        let b = ral_exact(&pd, &pg, &cfg, &EnumerationBudget::default(), Ordering::default()).unwrap();
        assert!((a.value - b.value).abs() < 1e-9);
    }

    #[test]
    fn no_noise_matches_plain_enumeration() {
        let (d, g) = pool(5, 3, 4);
        let cfg = RalConfig { n_o: 0, ..RalConfig::default() };
        let r = ral_exact(&d, &g, &cfg, &EnumerationBudget::default(), Ordering::default()).unwrap();
        // Direct minimax over labelings with every point in the SVM.
        let mut best = f64::INFINITY;
        for &s in &d.candidate_idx {
            let rest: Vec<usize> = d.unlabeled_idx.iter().copied().filter(|&i| i != s).collect();
            let mut worst = f64::NEG_INFINITY;
            for ys in [1.0, -1.0] {
                let mut inner = f64::INFINITY;
                for mask in 0..(1 << rest.len()) {
                    let mut y = DVector::from_fn(5, |i, _| d.y(i));
                    y[s] = ys;
                    for (j, &i) in rest.iter().enumerate() {
                        y[i] = if mask & (1 << j) != 0 { -1.0 } else { 1.0 };
                    }
                    let (_, v) = weighted_svm(&g.k, &y, &DVector::from_element(5, 1.0), cfg.lambda);
                    inner = inner.min(v - cfg.c_a);
                }
                worst = worst.max(inner);
            }
            best = best.min(worst);
        }
        assert!((r.value - best).abs() < 1e-12);
    }

    #[test]
    fn relaxation_lower_bounds_exact() {
        let (d, g) = pool(5, 3, 5);
        let cfg = RalConfig::default();
        let exact = ral_exact(&d, &g, &cfg, &EnumerationBudget::default(), Ordering::default()).unwrap();
        let (prob, _) = assemble(&d, &g, &cfg).unwrap();
        let out = solve(&prob, &SolverConfig::default(), None).unwrap();
        // Relaxed objective omits the constant c_a·n; both sides drop it.
        assert!(out.objective <= exact.value + 1e-4, "{} vs {}", out.objective, exact.value);
    }

    #[test]
    fn rank1_grid_bounds_relaxation() {
        let (d, g) = pool(3, 3, 6);
        let (relax, _) = solve_sc_relaxation(&d, &g, 1.0, 1.0, 1, &SolverConfig::default()).unwrap();
        let r = rank1_verify(&d, &g, 1.0, 1.0, 1, 11, relax.objective).unwrap();
        assert!(r.gap >= -1e-4, "{r:?}");
        let zero = rank1_verify(&d, &g, 1.0, 1.0, 1, 1, relax.objective).unwrap();
        let y = DVector::from_fn(3, |i, _| d.y(i));
        let (_, plain) = weighted_svm(&g.k, &y, &DVector::from_element(3, 1.0), 1.0);
        assert!((zero.grid_min - plain).abs() < 1e-12);
    }

    #[test]
    fn alternating_sits_between_relaxation_and_exact() {
        let (mut d, g) = pool(6, 6, 7);
        d.labels[2] = d.labels[2].map(|v| -v);
        let (_, exact, _) = solve_sc_exact(&d, &g, 1.0, 0.5, 1).unwrap();
        let (alt, p) = sc_alternating(&d, &g, 1.0, 0.5, 1, 10, 1).unwrap();
        let (relax, _) = solve_sc_relaxation(&d, &g, 1.0, 0.5, 1, &SolverConfig::default()).unwrap();
        assert!(p.sum() <= 1.0 + 1e-9);
        assert!(alt <= exact + 1e-9);
        assert!(relax.objective <= alt + 1e-4);
    }

    #[test]
    fn dykstra_matches_dual_prox() {
        let (d, g) = pool(4, 2, 8);
        let (prob, x0) = assemble(&d, &g, &RalConfig::default()).unwrap();
        let solver = ProxSolver::new(&prob, default_q_metric(&prob), 1.0).unwrap();
        let c = build_ck(&prob, &DVector::from_element(4, 0.7));
        let dual = solver.solve(&prob, ProxInput { center: &x0.x, c: &c }, None, 1e-12, 100_000).unwrap();
        let (primal, _) = prox_by_dykstra(&prob, &solver, &x0.x, &c, 1e-12, 500_000).unwrap();
        let dist = (primal.pack() - dual.x.pack()).amax();
        assert!(dist < 1e-5, "{dist}");
    }

    #[test]
    fn newton_psd_projection_matches_eigen() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let a = DMatrix::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0));
            let m = (&a + a.transpose()) * 0.5;
            let x = psd_projection_newton(&m).unwrap();
            let e = project_psd(&m).unwrap();
            assert!((&x - &e).amax() < 1e-10);
            assert!(psd_certificate(&m, &x) < 1e-10);
        }
    }
}
