//! Supervised Simple-Complex classifier.
//!
//! A bias-free kernel SVM `f` is trained jointly with a complex function
//! `f_o = Σ β_i k_o(x_i, ·)` that absorbs noisy instances: instance `i`
//! contributes to the SVM with weight `h_i = 1 − y_i f_o(x_i)`, and
//! `|f_o(x_i)| ≤ p_i` with `Σ p ≤ n_o`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernel::GramPair;
use crate::qp::svm_dual_exact;
use crate::ral::{assemble_supervised, RalConfig};
use crate::solver::{solve, SolverConfig};

/// Largest pool accepted by the subset enumeration.
pub const EXACT_MAX_N: usize = 12;

/// Decision threshold on `|f_o|` for flagging an instance as noisy.
pub const NOISY_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SCModel {
    pub alpha: DVector<f64>,
    pub beta: DVector<f64>,
    pub p: DVector<f64>,
    /// Per-instance SVM weights `h`.
    pub weights: DVector<f64>,
    /// Training labels.
    pub y: DVector<f64>,
    pub lambda: f64,
    pub lambda_o: f64,
    pub n_o: usize,
}

impl SCModel {
    /// Coefficients of `f` in the kernel expansion.
    pub fn coefficients(&self) -> DVector<f64> {
        self.alpha.component_mul(&self.y).component_mul(&self.weights) / self.lambda
    }

    /// `f` at the training points.
    pub fn f_train(&self, k: &DMatrix<f64>) -> DVector<f64> {
        k * self.coefficients()
    }

    /// `f_o` at the training points.
    pub fn fo_train(&self, k_o: &DMatrix<f64>) -> DVector<f64> {
        k_o * &self.beta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub f_value: f64,
    pub fo_value: f64,
    pub label: i8,
    pub noisy_flag: bool,
}

/// Evaluates both functions at a point given its kernel rows against the
/// training set.
pub fn sc_predict(model: &SCModel, gram_row_simple: &DVector<f64>, gram_row_complex: &DVector<f64>) -> Prediction {
    let f_value = gram_row_simple.dot(&model.coefficients());
    let fo_value = gram_row_complex.dot(&model.beta);
    Prediction {
        f_value,
        fo_value,
        label: if f_value >= 0.0 { 1 } else { -1 },
        noisy_flag: fo_value.abs() >= NOISY_THRESHOLD,
    }
}

fn labels_of(data: &Dataset) -> Result<DVector<f64>> {
    if !data.unlabeled_idx.is_empty() {
        return Err(Error::Contract("Simple-Complex training needs every instance labeled".into()));
    }
    Ok(DVector::from_fn(data.n(), |i, _| data.y(i)))
}

/// Weighted bias-free SVM dual `max hᵀα − (1/2λ) αᵀ(K ⊙ (Yh)(Yh)ᵀ)α`.
pub fn weighted_svm(k: &DMatrix<f64>, y: &DVector<f64>, h: &DVector<f64>, lambda: f64) -> (DVector<f64>, f64) {
    let yh = y.component_mul(h);
    let k_eff = k.component_mul(&(&yh * yh.transpose()));
    svm_dual_exact(&k_eff, h, lambda)
}

/// Objective of a subset-removal choice `O`: the SVM value without `O`
/// plus the norm of the complex function interpolating `y` on `O` and 0
/// elsewhere.
pub fn subset_objective(
    gram: &GramPair,
    y: &DVector<f64>,
    removed: &[usize],
    lambda: f64,
    lambda_o: f64,
) -> Result<(f64, DVector<f64>, DVector<f64>)> {
    let n = y.len();
    let mut h = DVector::from_element(n, 1.0);
    let mut t = DVector::zeros(n);
    for &i in removed {
        h[i] = 0.0;
        t[i] = y[i];
    }
    let (alpha, svm) = weighted_svm(&gram.k, y, &h, lambda);
    let beta = if removed.is_empty() {
        DVector::zeros(n)
    } else {
        gram.k_o
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numeric("complex Gram matrix is not positive definite".into()))?
            .solve(&t)
    };
    let value = svm + 0.5 * lambda_o * t.dot(&beta);
    Ok((value, alpha, beta))
}

/// Exact solution by enumerating every noisy subset with `|O| ≤ n_o`.
pub fn solve_sc_exact(
    data: &Dataset,
    gram: &GramPair,
    lambda: f64,
    lambda_o: f64,
    n_o: usize,
) -> Result<(SCModel, f64, Vec<usize>)> {
    let y = labels_of(data)?;
    let n = y.len();
    if n > EXACT_MAX_N {
        return Err(Error::Enumeration { count: 1u128 << n, cap: 1u128 << EXACT_MAX_N });
    }
    let mut best: Option<(f64, DVector<f64>, DVector<f64>, Vec<usize>)> = None;
    for mask in 0u32..(1u32 << n) {
        if mask.count_ones() as usize > n_o {
            continue;
        }
        let removed: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
        let (value, alpha, beta) = subset_objective(gram, &y, &removed, lambda, lambda_o)?;
        if best.as_ref().is_none_or(|b| value < b.0 - 1e-12) {
            best = Some((value, alpha, beta, removed));
        }
    }
    let (value, alpha, beta, removed) = best.expect("the empty subset is always enumerated");
    let mut p = DVector::zeros(n);
    for &i in &removed {
        p[i] = 1.0;
    }
    let weights = p.map(|v| 1.0 - v);
    Ok((SCModel { alpha, beta, p, weights, y, lambda, lambda_o, n_o }, value, removed))
}

/// Solution of the convex relaxation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SCRelaxSolution {
    /// `Y Ĝ_D Y`, the relaxed outer product of `h`.
    pub h_mat: DMatrix<f64>,
    /// `h = 1 − Y K_o β`.
    pub h: DVector<f64>,
    /// `(1/2λ) αᵀ(K ⊙ Ĝ_D)α` at the optimal α.
    pub t: f64,
    /// Multipliers of `α ≤ 1`.
    pub beta_prime: DVector<f64>,
    /// Multipliers of `α ≥ 0`.
    pub eta_prime: DVector<f64>,
    pub objective: f64,
    pub alpha: DVector<f64>,
    pub beta: DVector<f64>,
    pub p: DVector<f64>,
    pub solver_iterations: usize,
}

/// Top-`n_o` entries of `|f_o|`, ties by index; entries below `1e-6` are
/// never selected.
pub fn round_noisy(fo: &DVector<f64>, n_o: usize) -> DVector<f64> {
    let mut order: Vec<usize> = (0..fo.len()).collect();
    order.sort_by(|&a, &b| fo[b].abs().total_cmp(&fo[a].abs()).then(a.cmp(&b)));
    let mut p = DVector::zeros(fo.len());
    for &i in order.iter().take(n_o) {
        if fo[i].abs() >= 1e-6 {
            p[i] = 1.0;
        }
    }
    p
}

pub fn solve_sc_relaxation(
    data: &Dataset,
    gram: &GramPair,
    lambda: f64,
    lambda_o: f64,
    n_o: usize,
    solver: &SolverConfig,
) -> Result<(SCRelaxSolution, SCModel)> {
    let y = labels_of(data)?;
    let n = y.len();
    let cfg = RalConfig { lambda, lambda_o, n_o, ..RalConfig::default() };
    let (problem, _) = assemble_supervised(data, gram, &cfg)?;
    let out = solve(&problem, solver, None)?;
    let x = &out.point.x;
    let alpha = out.point.alpha.clone();
    let g_d = problem.g_data(x).into_owned();
    let yy = &y * y.transpose();
    let h_mat = g_d.component_mul(&yy);
    let fo = &gram.k_o * &x.beta;
    let h = DVector::from_fn(n, |i, _| 1.0 - y[i] * fo[i]);
    let kg = gram.k.component_mul(&g_d);
    let t = alpha.dot(&(&kg * &alpha)) / (2.0 * lambda);
    let grad = problem.a(x) - &kg * &alpha / lambda;
    let beta_prime = grad.map(|g| g.max(0.0));
    let eta_prime = grad.map(|g| (-g).max(0.0));
    let relax = SCRelaxSolution {
        h_mat,
        h,
        t,
        beta_prime,
        eta_prime,
        objective: out.objective,
        alpha,
        beta: x.beta.clone(),
        p: x.p.clone(),
        solver_iterations: out.iterations,
    };
    let p = round_noisy(&fo, n_o);
    let weights = p.map(|v| 1.0 - v);
    let (alpha_r, _) = weighted_svm(&gram.k, &y, &weights, lambda);
    let model = SCModel { alpha: alpha_r, beta: x.beta.clone(), p, weights, y, lambda, lambda_o, n_o };
    Ok((relax, model))
}

/// Plain bias-free kernel SVM on a fully labeled dataset.
pub fn fit_svm(data: &Dataset, k: &DMatrix<f64>, lambda: f64) -> Result<SCModel> {
    let y = labels_of(data)?;
    let n = y.len();
    let ones = DVector::from_element(n, 1.0);
    let (alpha, _) = weighted_svm(k, &y, &ones, lambda);
    Ok(SCModel { alpha, beta: DVector::zeros(n), p: DVector::zeros(n), weights: ones, y, lambda, lambda_o: 1.0, n_o: 0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{two_gaussians, SyntheticSpec};
    use crate::linalg::min_eigenvalue;
    use crate::loss::{hinge, l01};

    fn labeled(n: usize, seed: u64, flip: Option<usize>) -> (Dataset, GramPair) {
        let spec = SyntheticSpec { n, dim: 2, separation: 4.0, margin: 1.0, labeled: n };
        let mut d = two_gaussians(&spec, seed).unwrap();
        if let Some(i) = flip {
            d.labels[i] = d.labels[i].map(|y| -y);
        }
        let g = GramPair::default_for(&d.features).unwrap();
        (d, g)
    }

    #[test]
    fn no_noise_budget_is_plain_svm() {
        let (d, g) = labeled(6, 1, None);
        let (m, v, o) = solve_sc_exact(&d, &g, 1.0, 1.0, 0).unwrap();
        assert!(o.is_empty());
        let y = DVector::from_fn(6, |i, _| d.y(i));
        let (_, plain) = weighted_svm(&g.k, &y, &DVector::from_element(6, 1.0), 1.0);
        assert!((v - plain).abs() < 1e-12);
        assert_eq!(m.beta, DVector::zeros(6));
    }

    #[test]
    fn flipped_label_is_removed_when_it_pays() {
        let (d, g) = labeled(6, 2, Some(3));
        let y = DVector::from_fn(6, |i, _| d.y(i));
        let (_, v, o) = solve_sc_exact(&d, &g, 1.0, 0.1, 1).unwrap();
        let (v3, _, _) = subset_objective(&g, &y, &[3], 1.0, 0.1).unwrap();
        let (v0, _, _) = subset_objective(&g, &y, &[], 1.0, 0.1).unwrap();
        if v3 < v0 {
            assert_eq!(o, vec![3]);
        }
        assert!(v <= v0.min(v3) + 1e-12);
    }

    #[test]
    fn guard_rejects_large_pools() {
        let (d, g) = labeled(13, 3, None);
        assert!(matches!(solve_sc_exact(&d, &g, 1.0, 1.0, 1), Err(Error::Enumeration { .. })));
    }

    #[test]
    fn relaxation_lower_bounds_exact() {
        let (d, g) = labeled(6, 4, Some(1));
        let (_, exact, _) = solve_sc_exact(&d, &g, 1.0, 0.5, 1).unwrap();
        let (relax, model) = solve_sc_relaxation(&d, &g, 1.0, 0.5, 1, &SolverConfig::default()).unwrap();
        assert!(relax.objective <= exact + 1e-4, "{} vs {exact}", relax.objective);
        assert!(relax.beta_prime.min() >= 0.0 && relax.eta_prime.min() >= 0.0);
        // Lifted constraint [H, Yh; (Yh)ᵀ, 1] ⪰ 0 via the diagonal identity.
        for i in 0..6 {
            assert!((relax.h_mat[(i, i)] - relax.h[i]).abs() < 1e-6);
        }
        assert!(min_eigenvalue(&relax.h_mat) > -1e-6);
        assert!(model.p.sum() <= 1.0 + 1e-9);
        // Orthogonality tendency in its assertable form.
        let f = model.f_train(&g.k);
        let fo = model.fo_train(&g.k_o);
        let gated: f64 = (0..6).map(|i| l01(d.y(i) * fo[i]) * hinge(d.y(i) * f[i])).sum();
        let plain: f64 = (0..6).map(|i| hinge(d.y(i) * f[i])).sum();
        assert!(gated <= plain + 1e-12);
    }

    #[test]
    fn zero_budget_relaxation_is_svm_value() {
        let (d, g) = labeled(5, 5, None);
        let (relax, _) = solve_sc_relaxation(&d, &g, 1.0, 1.0, 0, &SolverConfig::default()).unwrap();
        let y = DVector::from_fn(5, |i, _| d.y(i));
        let (_, plain) = weighted_svm(&g.k, &y, &DVector::from_element(5, 1.0), 1.0);
        assert!((relax.objective - plain).abs() < 1e-5, "{} vs {plain}", relax.objective);
        assert!(relax.p.amax() < 1e-6);
    }

    #[test]
    fn prediction_basics() {
        let model = SCModel {
            alpha: DVector::from_vec(vec![1.0, 1.0]),
            beta: DVector::zeros(2),
            p: DVector::zeros(2),
            weights: DVector::from_element(2, 1.0),
            y: DVector::from_vec(vec![1.0, -1.0]),
            lambda: 1.0,
            lambda_o: 1.0,
            n_o: 0,
        };
        // Midpoint of a symmetric two-point model.
        let pred = sc_predict(&model, &DVector::from_vec(vec![0.3, 0.3]), &DVector::from_vec(vec![0.5, 0.2]));
        assert_eq!(pred.f_value, 0.0);
        assert_eq!(pred.fo_value, 0.0);
        assert!(!pred.noisy_flag);
    }

    #[test]
    fn rounding_picks_largest_complex_values() {
        let fo = DVector::from_vec(vec![0.1, -0.9, 0.9, 0.0]);
        assert_eq!(round_noisy(&fo, 2), DVector::from_vec(vec![0.0, 1.0, 1.0, 0.0]));
        assert_eq!(round_noisy(&fo, 0), DVector::zeros(4));
        assert_eq!(round_noisy(&DVector::zeros(3), 2), DVector::zeros(3));
    }
}
