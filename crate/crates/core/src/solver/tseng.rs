//! Forward-backward-forward splitting.

use std::time::Instant;

use nalgebra::DVector;

use super::TraceRecord;
use crate::error::{Error, Result};

/// Monotone inclusion `0 ∈ A t + B t` with `B` single valued and Lipschitz.
pub trait SplitProblem {
    /// `B t`.
    fn forward(&mut self, t: &DVector<f64>) -> Result<DVector<f64>>;
    /// `J_{γA} t = (I + γA)⁻¹ t`.
    fn resolvent(&mut self, t: &DVector<f64>, gamma: f64, outer: usize, last_residual: f64) -> Result<DVector<f64>>;
    /// Projection onto a closed convex set containing the solutions.
    fn project(&mut self, t: &DVector<f64>) -> Result<DVector<f64>>;
    /// Objective, KKT residual and inner iteration count for the trace.
    fn diagnostics(&mut self, _t: &DVector<f64>) -> (f64, f64, usize) {
        (f64::NAN, f64::NAN, 0)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TsengSettings {
    pub gamma: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub record_timing: bool,
}

#[derive(Debug, Clone)]
pub struct TsengOutcome {
    pub t: DVector<f64>,
    pub iterations: usize,
    pub gamma: f64,
    pub trace: Vec<TraceRecord>,
}

/// Safety factor in the step test `γ‖Bt − Bz‖ ≤ θ‖t − z‖`.
const STEP_THETA: f64 = 0.95;
/// Consecutive residual increases that halve the step.
const MAX_INCREASES: usize = 10;

pub fn tseng<P: SplitProblem>(problem: &mut P, t0: &DVector<f64>, settings: TsengSettings) -> Result<TsengOutcome> {
    let clock = Instant::now();
    let mut gamma = settings.gamma;
    if !(gamma > 0.0) {
        return Err(Error::Config(format!("step size {gamma} must be positive")));
    }
    let mut t = t0.clone();
    let mut trace = Vec::new();
    let mut previous = f64::INFINITY;
    let mut increases = 0;
    for it in 1..=settings.max_iter {
        let bt = problem.forward(&t)?;
        let (tz, btz) = loop {
            let ty = &t - &bt * gamma;
            let tz = problem.resolvent(&ty, gamma, it, previous)?;
            let btz = problem.forward(&tz)?;
            let lhs = gamma * (&bt - &btz).norm();
            let rhs = STEP_THETA * (&t - &tz).norm();
            if lhs <= rhs || lhs <= 1e-15 {
                break (tz, btz);
            }
            gamma *= 0.5;
            if gamma < 1e-12 * settings.gamma {
                return Err(Error::Step { gamma, message: "step size collapsed while backtracking".into() });
            }
        };
        let next = problem.project(&(&tz + (&bt - &btz) * gamma))?;
        let residual = (&next - &t).norm() / t.norm().max(1.0);
        let (objective, kkt_max, inner_iters) = problem.diagnostics(&tz);
        trace.push(TraceRecord {
            iter: it,
            objective,
            fixed_point_residual: residual,
            kkt_max,
            inner_iters,
            wall_ms: if settings.record_timing { clock.elapsed().as_millis() as u64 } else { 0 },
        });
        if residual <= settings.tol {
            return Ok(TsengOutcome { t: tz, iterations: it, gamma, trace });
        }
        if residual > previous {
            increases += 1;
            if increases >= MAX_INCREASES {
                // Sustained growth comes from inexact resolvents near the
                // tolerance; a shorter step damps it.
                gamma *= 0.5;
                increases = 0;
                log::debug!("residual grew {MAX_INCREASES} iterations in a row; step reduced to {gamma:.3e}");
                if gamma < 1e-12 * settings.gamma {
                    return Err(Error::Step { gamma, message: "step size collapsed after sustained residual growth".into() });
                }
            }
        } else {
            increases = 0;
        }
        previous = residual;
        t = next;
    }
    let residual = trace.last().map_or(f64::INFINITY, |r| r.fixed_point_residual);
    Err(Error::Budget {
        what: "forward-backward-forward splitting",
        iterations: settings.max_iter,
        residual,
        trace: trace.iter().map(|r| r.fixed_point_residual).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    /// `min_x max_a xᵀMa` over boxes `[-1, 1]`.
    struct Bilinear {
        m: DMatrix<f64>,
    }

    impl SplitProblem for Bilinear {
        fn forward(&mut self, t: &DVector<f64>) -> Result<DVector<f64>> {
            let n = self.m.nrows();
            let x = t.rows(0, n);
            let a = t.rows(n, n);
            let gx = &self.m * a;
            let ga = -(self.m.transpose() * x);
            let mut out = DVector::zeros(2 * n);
            out.rows_mut(0, n).copy_from(&gx);
            out.rows_mut(n, n).copy_from(&ga);
            Ok(out)
        }

        fn resolvent(&mut self, t: &DVector<f64>, _gamma: f64, _outer: usize, _last: f64) -> Result<DVector<f64>> {
            Ok(t.map(|v| v.clamp(-1.0, 1.0)))
        }

        fn project(&mut self, t: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(t.map(|v| v.clamp(-1.0, 1.0)))
        }
    }

    #[test]
    fn bilinear_toy_converges_to_origin() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -0.5, 1.0]);
        let l = m.norm();
        let mut p = Bilinear { m };
        let t0 = DVector::from_vec(vec![0.8, -0.6, 0.3, 0.9]);
        let out = tseng(&mut p, &t0, TsengSettings { gamma: 0.9 / l, tol: 1e-10, max_iter: 100_000, record_timing: false })
            .unwrap();
        assert!(out.t.amax() < 1e-8, "{}", out.t);
    }

    #[test]
    fn warm_start_at_solution_stops_immediately() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -0.5, 1.0]);
        let mut p = Bilinear { m };
        let out = tseng(&mut p, &DVector::zeros(4), TsengSettings { gamma: 0.3, tol: 1e-10, max_iter: 10, record_timing: false })
            .unwrap();
        assert!(out.iterations <= 2);
    }

    #[test]
    fn oversized_step_is_reduced() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -0.5, 1.0]);
        let mut p = Bilinear { m };
        let t0 = DVector::from_vec(vec![0.8, -0.6, 0.3, 0.9]);
        let out = tseng(&mut p, &t0, TsengSettings { gamma: 50.0, tol: 1e-9, max_iter: 100_000, record_timing: false })
            .unwrap();
        assert!(out.gamma < 50.0);
        assert!(out.t.amax() < 1e-7);
    }

    #[test]
    fn budget_error_carries_trace() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -0.5, 1.0]);
        let mut p = Bilinear { m };
        let t0 = DVector::from_vec(vec![0.8, -0.6, 0.3, 0.9]);
        match tseng(&mut p, &t0, TsengSettings { gamma: 0.01, tol: 1e-12, max_iter: 5, record_timing: false }) {
            Err(Error::Budget { trace, iterations, .. }) => {
                assert_eq!(iterations, 5);
                assert_eq!(trace.len(), 5);
            }
            other => panic!("expected budget error, got {other:?}"),
        }
    }
}
