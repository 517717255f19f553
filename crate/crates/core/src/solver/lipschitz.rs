//! Sampled Lipschitz constants of `∇_α f`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::project::Polytope;
use crate::error::Result;
use crate::linalg::power_iteration;
use crate::ral::{completion, grad_alpha, slack_values, Primal, RalProblem, RowClass};

pub const SAFETY: f64 = 1.2;
pub const SAMPLES: usize = 8;
pub const POWER_ITERS: usize = 20;

/// Random feasible points: `(p, q)` projected onto the polytope with
/// `p + q ≤ 1`, a rank-one-plus-diagonal lifted matrix with random unlabeled
/// lifts, and, when the coupling rows are present, `β` solving
/// `K_o β = y ⊙ p` on labeled points and `0` elsewhere.
pub fn feasible_samples(problem: &RalProblem, count: usize, seed: u64) -> Result<Vec<Primal>> {
    let poly = Polytope::for_problem(problem);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = problem.n;
    let c = problem.corner();
    let coupled = !problem.ops.indices_of(RowClass::Ev).is_empty();
    let k_o = coupled.then(|| problem.k_o.clone().cholesky()).flatten();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let p0 = DVector::from_fn(n, |_, _| rng.random_range(-0.5..1.0));
        let q0 = DVector::from_fn(n, |_, _| rng.random_range(0.0..1.0));
        let (mut p, q) = poly.project(&p0, &q0)?;
        // Keep a = 1 − p − q nonnegative so the diagonal is PSD.
        for i in 0..n {
            p[i] = p[i].min(1.0 - q[i]).max(0.0);
        }
        let beta = match &k_o {
            Some(ch) => ch.solve(&DVector::from_fn(n, |i, _| if problem.labeled[i] { problem.y[i] * p[i] } else { 0.0 })),
            None if coupled => {
                for i in (0..n).filter(|&i| problem.labeled[i]) {
                    p[i] = 0.0;
                }
                DVector::zeros(n)
            }
            None => DVector::zeros(n),
        };
        let mut x = completion(problem, &p, &q, &beta);
        let mut z = x.lifted.column(c).into_owned();
        for i in (0..n).filter(|&i| !problem.labeled[i]) {
            z[i] = rng.random_range(-1.0..1.0) * x.lifted[(i, i)];
        }
        let diag = x.lifted.diagonal();
        let mut lifted = &z * z.transpose();
        for i in 0..problem.dim() {
            lifted[(i, i)] = diag[i];
        }
        x.lifted = lifted;
        x.s = slack_values(problem, &x);
        out.push(x);
    }
    Ok(out)
}

/// `L_αα` from power iteration on `(1/λ) K ⊙ Ĝ_D` over the samples and the
/// all-ones data block.
pub fn estimate_l_alpha_alpha(k: &DMatrix<f64>, lambda: f64, blocks: &[DMatrix<f64>]) -> f64 {
    let n = k.nrows();
    let mut best: f64 = 0.0;
    let ones = DMatrix::from_element(n, n, 1.0);
    for g in blocks.iter().chain(std::iter::once(&ones)) {
        let h = k.component_mul(g) / lambda;
        best = best.max(power_iteration(n, POWER_ITERS, |v| &h * v));
    }
    SAFETY * best
}

/// Largest ratio `‖∇_α f(x, α) − ∇_α f(x', α)‖ / ‖x − x'‖` over sample
/// pairs and random α.
pub fn estimate_l_alpha_x(problem: &RalProblem, samples: &[Primal], seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = problem.n;
    let mut best: f64 = 0.0;
    for (a, xa) in samples.iter().enumerate() {
        for xb in &samples[a + 1..] {
            let dist = ((&xa.lifted - &xb.lifted).norm_squared()
                + (&xa.p - &xb.p).norm_squared()
                + (&xa.q - &xb.q).norm_squared())
            .sqrt();
            if dist < 1e-12 {
                continue;
            }
            for _ in 0..2 {
                let alpha = DVector::from_fn(n, |_, _| rng.random_range(0.0..1.0));
                let d = grad_alpha(problem, xa, &alpha) - grad_alpha(problem, xb, &alpha);
                best = best.max(d.norm() / dist);
            }
            let ones = DVector::from_element(n, 1.0);
            let d = grad_alpha(problem, xa, &ones) - grad_alpha(problem, xb, &ones);
            best = best.max(d.norm() / dist);
        }
    }
    SAFETY * best
}

/// `(L_αα, L_αx)` for an assembled problem.
pub fn estimate_lipschitz(problem: &RalProblem, seed: u64) -> Result<(f64, f64)> {
    let samples = feasible_samples(problem, SAMPLES, seed)?;
    let blocks: Vec<DMatrix<f64>> = samples.iter().map(|x| problem.g_data(x).into_owned()).collect();
    let l_aa = estimate_l_alpha_alpha(&problem.k, problem.cfg.lambda, &blocks);
    let l_ax = estimate_l_alpha_x(problem, &samples, seed ^ 0x5eed);
    Ok((l_aa, l_ax))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{two_gaussians, SyntheticSpec};
    use crate::kernel::GramPair;
    use crate::linalg::{max_eigenvalue, min_eigenvalue};
    use crate::ral::{assemble, row_residual, RalConfig};

    #[test]
    fn identity_pair_gives_unit_estimate() {
        let i = DMatrix::identity(4, 4);
        let l = estimate_l_alpha_alpha(&i, 1.0, &[i.clone()]);
        assert!((1.0..=1.2 + 1e-12).contains(&l), "{l}");
    }

    #[test]
    fn zero_kernel_gives_zero() {
        let z = DMatrix::zeros(3, 3);
        assert_eq!(estimate_l_alpha_alpha(&z, 1.0, &[DMatrix::identity(3, 3)]), 0.0);
    }

    #[test]
    fn power_iteration_within_one_percent_of_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let a = DMatrix::from_fn(6, 6, |_, _| rng.random_range(-1.0..1.0));
            let b = DMatrix::from_fn(6, 6, |_, _| rng.random_range(-1.0..1.0));
            let k = &a * a.transpose();
            let g = &b * b.transpose();
            let h = k.component_mul(&g);
            let dense = max_eigenvalue(&h);
            let est = power_iteration(6, POWER_ITERS, |v| &h * v);
            assert!((est - dense).abs() <= 0.01 * dense, "{est} vs {dense}");
        }
    }

    #[test]
    fn samples_are_feasible() {
        let spec = SyntheticSpec { n: 6, dim: 2, separation: 3.0, margin: 0.0, labeled: 3 };
        let d = two_gaussians(&spec, 5).unwrap();
        let g = GramPair::default_for(&d.features).unwrap();
        let (prob, _) = assemble(&d, &g, &RalConfig::default()).unwrap();
        for x in feasible_samples(&prob, 8, 1).unwrap() {
            let r = row_residual(&prob, &x);
            let k = r.iamax();
            assert!(r.amax() < 1e-9, "{:?} {} p {} q {}", prob.ops.rows[k].key, r[k], x.p, x.q);
            assert!(min_eigenvalue(&x.lifted) > -1e-10);
            assert!(x.s.min() >= 0.0);
        }
        let (l_aa, l_ax) = estimate_lipschitz(&prob, 3).unwrap();
        assert!(l_aa > 0.0 && l_ax > 0.0);
    }
}
