//! Accelerated composite method (similar-triangles form) for
//! `min_{α ∈ box} f_ρ(α) + (ρ/2)‖α − α_st‖²`, with `f_ρ` smooth and
//! available through an oracle that also returns the inner maximizer.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Answer of the smoothed-function oracle at one α.
pub struct OracleAnswer {
    pub grad: DVector<f64>,
    /// Inner maximizer, averaged into the primal estimate.
    pub aux: DVector<f64>,
}

pub trait SmoothOracle {
    fn eval(&mut self, alpha: &DVector<f64>) -> Result<OracleAnswer>;
}

impl<F> SmoothOracle for F
where
    F: FnMut(&DVector<f64>) -> Result<OracleAnswer>,
{
    fn eval(&mut self, alpha: &DVector<f64>) -> Result<OracleAnswer> {
        self(alpha)
    }
}

/// Estimate-sequence state; reset between active-learning rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accumulator {
    /// `A_k`.
    pub a_total: f64,
    /// `Σ a_i ∇f_ρ(α_i)`.
    pub grad_sum: DVector<f64>,
}

impl Accumulator {
    pub fn new(n: usize) -> Self {
        Accumulator { a_total: 0.0, grad_sum: DVector::zeros(n) }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NesterovSettings {
    /// Strong-convexity modulus of the composite term, also its weight.
    pub rho: f64,
    /// Smoothness constant `L` in the doubled convention: the step uses `L/2`.
    pub lipschitz: f64,
    pub lo: f64,
    pub hi: f64,
    pub max_iter: usize,
    /// Stop once successive `β_k` differ by at most this.
    pub tol: f64,
}

#[derive(Debug, Clone)]
pub struct NesterovOutcome {
    /// Averaged α estimate `β_K`.
    pub beta: DVector<f64>,
    /// Averaged inner maximizer `x̂_K`.
    pub x_hat: DVector<f64>,
    pub iterations: usize,
    pub accumulator: Accumulator,
    /// `‖β_k − β_{k−1}‖` per iteration.
    pub steps: Vec<f64>,
}

/// Positive root of `a² / (A + a) = c`.
pub fn step_weight(a_total: f64, c: f64) -> f64 {
    0.5 * (c + (c * c + 4.0 * c * a_total).sqrt())
}

pub fn accelerated_composite<O: SmoothOracle>(
    oracle: &mut O,
    alpha_st: &DVector<f64>,
    settings: NesterovSettings,
) -> Result<NesterovOutcome> {
    let n = alpha_st.len();
    let clamp = |v: DVector<f64>| v.map(|x| x.clamp(settings.lo, settings.hi));
    let mu = settings.rho;
    let mut acc = Accumulator::new(n);
    let mut v = clamp(alpha_st.clone());
    let mut beta = v.clone();
    let mut x_hat: Option<DVector<f64>> = None;
    let mut steps = Vec::new();
    for k in 1..=settings.max_iter {
        let a_prev = acc.a_total;
        let c = (1.0 + mu * a_prev) / (settings.lipschitz / 2.0);
        let a = step_weight(a_prev, c);
        let a_next = a_prev + a;
        let w_old = a_prev / a_next;
        let w_new = a / a_next;
        let alpha_k = &beta * w_old + &v * w_new;
        let ans = oracle.eval(&alpha_k)?;
        acc.grad_sum += &ans.grad * a;
        acc.a_total = a_next;
        // ψ_k(α) = ½‖α − α_st‖² + Σ a_i⟨g_i, α⟩ + A_k (ρ/2)‖α − α_st‖² + const
        // is an isotropic quadratic, so its box minimizer is a clamp.
        v = clamp(alpha_st - &acc.grad_sum / (1.0 + mu * a_next));
        x_hat = Some(match x_hat {
            None => ans.aux.clone(),
            Some(prev) => prev * w_old + &ans.aux * w_new,
        });
        let beta_next = &beta * w_old + &v * w_new;
        let step = (&beta_next - &beta).norm();
        steps.push(step);
        beta = beta_next;
        if step <= settings.tol && k >= 2 {
            return Ok(NesterovOutcome { beta, x_hat: x_hat.unwrap(), iterations: k, accumulator: acc, steps });
        }
    }
    Ok(NesterovOutcome {
        beta,
        x_hat: x_hat.unwrap_or_else(|| DVector::zeros(0)),
        iterations: settings.max_iter,
        accumulator: acc,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_weight_solves_defining_equation() {
        for &(a_total, c) in &[(0.0, 1.0), (3.0, 0.5), (10.0, 7.0)] {
            let a = step_weight(a_total, c);
            assert!(a > 0.0);
            assert!((a * a / (a_total + a) - c).abs() < 1e-12);
        }
    }

    #[test]
    fn one_dimensional_quadratic_reaches_minimizer() {
        // f(α) = (L/4)(α − c)², composite term (ρ/2)(α − α_st)².
        let (l, c, rho, st) = (8.0, 0.3, 0.5, 0.9);
        let mut oracle = |a: &DVector<f64>| {
            Ok(OracleAnswer { grad: a.map(|v| l / 2.0 * (v - c)), aux: a.clone() })
        };
        let settings = NesterovSettings { rho, lipschitz: l, lo: 0.0, hi: 1.0, max_iter: 500, tol: 1e-14 };
        let out = accelerated_composite(&mut oracle, &DVector::from_element(1, st), settings).unwrap();
        let expect = (l / 2.0 * c + rho * st) / (l / 2.0 + rho);
        assert!((out.beta[0] - expect).abs() < 1e-10);
    }
}
