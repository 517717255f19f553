//! Box-constrained concave quadratic maximization.
//!
//! Solves `max wᵀα − ½ αᵀHα` over `lo ≤ α ≤ hi` with `H` symmetric PSD,
//! which covers every SVM-style dual in the crate.

use nalgebra::{DMatrix, DVector};

/// Result of a box QP solve.
#[derive(Debug, Clone)]
pub struct BoxQpSolution {
    pub alpha: DVector<f64>,
    /// Maximized objective value.
    pub value: f64,
    pub iterations: usize,
    /// Infinity norm of the projected gradient at `alpha`.
    pub kkt: f64,
}

pub struct BoxQp<'a> {
    pub h: &'a DMatrix<f64>,
    pub w: &'a DVector<f64>,
    pub lo: &'a DVector<f64>,
    pub hi: &'a DVector<f64>,
}

const MAX_ITER: usize = 5_000;

impl BoxQp<'_> {
    pub fn value(&self, a: &DVector<f64>) -> f64 {
        self.w.dot(a) - 0.5 * a.dot(&(self.h * a))
    }

    fn clamp(&self, a: &mut DVector<f64>) {
        for i in 0..a.len() {
            a[i] = a[i].clamp(self.lo[i], self.hi[i]);
        }
    }

    /// Projected-gradient residual of the minimization form.
    pub fn kkt(&self, a: &DVector<f64>) -> f64 {
        let g = self.h * a - self.w;
        (0..a.len())
            .map(|i| (a[i] - (a[i] - g[i]).clamp(self.lo[i], self.hi[i])).abs())
            .fold(0.0, f64::max)
    }

    /// Projected gradient with exact line search, alternated with Newton
    /// steps on the current free set.
    pub fn solve(&self, start: Option<&DVector<f64>>, tol: f64) -> BoxQpSolution {
        let n = self.w.len();
        let mut a = match start {
            Some(s) => s.clone(),
            None => DVector::zeros(n),
        };
        self.clamp(&mut a);
        if n == 0 {
            return BoxQpSolution { alpha: a, value: 0.0, iterations: 0, kkt: 0.0 };
        }
        let scale = 1.0 + self.w.amax() + self.h.amax();
        let mut iterations = 0;
        while iterations < MAX_ITER {
            iterations += 1;
            let g = self.h * &a - self.w;
            if self.kkt(&a) <= tol * scale {
                break;
            }
            // Cauchy step along the projected path.
            let ghg = g.dot(&(self.h * &g));
            let t = if ghg > 0.0 { g.dot(&g) / ghg } else { 1.0 / scale };
            let mut trial = &a - &g * t;
            self.clamp(&mut trial);
            let d = &trial - &a;
            let dhd = d.dot(&(self.h * &d));
            let slope = g.dot(&d);
            let s = if dhd > 0.0 { (-slope / dhd).clamp(0.0, 1.0) } else { 1.0 };
            a += &d * s;
            self.clamp(&mut a);
            self.newton_polish(&mut a);
        }
        BoxQpSolution { value: self.value(&a), kkt: self.kkt(&a), alpha: a, iterations }
    }

    fn newton_polish(&self, a: &mut DVector<f64>) {
        let n = a.len();
        let g = self.h * &*a - self.w;
        let free: Vec<usize> = (0..n)
            .filter(|&i| {
                let at_lo = a[i] <= self.lo[i] && g[i] > 0.0;
                let at_hi = a[i] >= self.hi[i] && g[i] < 0.0;
                !(at_lo || at_hi) && self.lo[i] < self.hi[i]
            })
            .collect();
        if free.is_empty() {
            return;
        }
        let hff = DMatrix::from_fn(free.len(), free.len(), |r, c| self.h[(free[r], free[c])]);
        let gf = DVector::from_fn(free.len(), |r, _| -g[free[r]]);
        let ridge = 1e-14 * (1.0 + hff.amax());
        let shifted = &hff + DMatrix::identity(free.len(), free.len()) * ridge;
        let Some(ch) = shifted.cholesky() else { return };
        let step = ch.solve(&gf);
        let base = self.value(a);
        let mut s = 1.0;
        for _ in 0..30 {
            let mut trial = a.clone();
            for (r, &i) in free.iter().enumerate() {
                trial[i] += s * step[r];
            }
            self.clamp(&mut trial);
            if self.value(&trial) >= base {
                *a = trial;
                return;
            }
            s *= 0.5;
        }
    }
}

/// Bias-free SVM dual: `max wᵀα − (1/2λ) αᵀKα` over `[0,1]ⁿ`.
///
/// Returns the maximizer and the optimal value.
pub fn svm_dual_exact(k_eff: &DMatrix<f64>, weights: &DVector<f64>, lambda: f64) -> (DVector<f64>, f64) {
    let n = weights.len();
    let h = k_eff / lambda;
    let lo = DVector::zeros(n);
    let hi = DVector::from_element(n, 1.0);
    let sol = BoxQp { h: &h, w: weights, lo: &lo, hi: &hi }.solve(None, 1e-13);
    (sol.alpha, sol.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_psd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &b * b.transpose()
    }

    #[test]
    fn identity_kernel_closed_form() {
        let k = DMatrix::identity(4, 4);
        let (a, v) = svm_dual_exact(&k, &DVector::from_element(4, 1.0), 1.0);
        assert!((a - DVector::from_element(4, 1.0)).amax() < 1e-12);
        assert!((v - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_weights_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k = random_psd(5, &mut rng);
        let (a, v) = svm_dual_exact(&k, &DVector::zeros(5), 0.7);
        assert!(a.amax() < 1e-12);
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn random_instance_satisfies_kkt() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let k = random_psd(5, &mut rng);
            let w = DVector::from_fn(5, |_, _| rng.random_range(-0.5..1.5));
            let lambda = 0.5;
            let (a, _) = svm_dual_exact(&k, &w, lambda);
            // Gradient of the maximized objective.
            let grad = &w - (&k * &a) / lambda;
            for i in 0..5 {
                if a[i] >= 1.0 - 1e-12 {
                    assert!(grad[i] >= -1e-7);
                } else if a[i] <= 1e-12 {
                    assert!(grad[i] <= 1e-7);
                } else {
                    assert!(grad[i].abs() <= 1e-7);
                }
            }
        }
    }

    #[test]
    fn restarts_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 12;
        let x = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-2.0..2.0));
        let k = crate::kernel::compute_gram(&x, &crate::kernel::KernelSpec::gaussian(0.8)).unwrap();
        let w = DVector::from_element(n, 1.0);
        let h = &k / 0.3;
        let lo = DVector::zeros(n);
        let hi = DVector::from_element(n, 1.0);
        let qp = BoxQp { h: &h, w: &w, lo: &lo, hi: &hi };
        let best = qp.solve(None, 1e-13).value;
        for _ in 0..10 {
            let start = DVector::from_fn(n, |_, _| rng.random_range(0.0..1.0));
            let v = qp.solve(Some(&start), 1e-13).value;
            assert!((v - best).abs() <= 1e-8, "{v} vs {best}");
        }
    }
}
