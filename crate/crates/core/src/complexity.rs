//! Instance complexity: how far an instance can move before the retrained
//! classifier changes by more than `ε` in RKHS norm.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernel::{GramPair, KernelSpec};
use crate::simple_complex::weighted_svm;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ComplexitySettings {
    /// Function-change threshold; `0.1·‖f‖_H` when absent.
    pub epsilon: Option<f64>,
    /// Random unit directions per instance, in addition to `±` the gradient.
    pub probes: usize,
    pub lambda: f64,
    /// Relative bisection tolerance on the radius.
    pub tol: f64,
    /// Radius cap as a multiple of the dataset diameter.
    pub cap_factor: f64,
    pub seed: u64,
}

impl Default for ComplexitySettings {
    fn default() -> Self {
        ComplexitySettings { epsilon: None, probes: 16, lambda: 0.01, tol: 1e-3, cap_factor: 10.0, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub scores: Vec<f64>,
    pub epsilon: f64,
    pub probes: usize,
    /// Indices by descending score, ties by index.
    pub ranking: Vec<usize>,
    /// Instances whose radius reached the cap in every direction.
    pub capped: Vec<usize>,
}

/// Base SVM with kernel matrix `k`, as expansion coefficients.
struct Expansion {
    points: DMatrix<f64>,
    coef: DVector<f64>,
}

fn train(k: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> DVector<f64> {
    let ones = DVector::from_element(y.len(), 1.0);
    let (alpha, _) = weighted_svm(k, y, &ones, lambda);
    alpha.component_mul(y) / lambda
}

fn cross_gram(spec: &KernelSpec, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let rows_a: Vec<Vec<f64>> = (0..a.nrows()).map(|i| a.row(i).iter().copied().collect()).collect();
    let rows_b: Vec<Vec<f64>> = (0..b.nrows()).map(|i| b.row(i).iter().copied().collect()).collect();
    DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| spec.eval(&rows_a[i], &rows_b[j]))
}

/// `‖f − g‖_H` for two kernel expansions.
fn rkhs_distance(spec: &KernelSpec, f: &Expansion, g: &Expansion) -> f64 {
    let ff = f.coef.dot(&(cross_gram(spec, &f.points, &f.points) * &f.coef));
    let gg = g.coef.dot(&(cross_gram(spec, &g.points, &g.points) * &g.coef));
    let fg = f.coef.dot(&(cross_gram(spec, &f.points, &g.points) * &g.coef));
    (ff + gg - 2.0 * fg).max(0.0).sqrt()
}

struct Probe<'a> {
    spec: KernelSpec,
    base: Expansion,
    k: &'a DMatrix<f64>,
    y: DVector<f64>,
    lambda: f64,
    i: usize,
}

impl Probe<'_> {
    /// Distance between the base model and the one retrained with `x_i`
    /// moved by `d·dir`.
    fn distance(&self, dir: &DVector<f64>, d: f64) -> f64 {
        let mut points = self.base.points.clone();
        for j in 0..points.ncols() {
            points[(self.i, j)] += d * dir[j];
        }
        let mut k = self.k.clone();
        let xi: Vec<f64> = points.row(self.i).iter().copied().collect();
        for j in 0..points.nrows() {
            if j != self.i {
                let xj: Vec<f64> = points.row(j).iter().copied().collect();
                let v = self.spec.eval(&xi, &xj);
                k[(self.i, j)] = v;
                k[(j, self.i)] = v;
            }
        }
        let coef = train(&k, &self.y, self.lambda);
        rkhs_distance(&self.spec, &self.base, &Expansion { points, coef })
    }

    /// Largest radius with every smaller radius within `eps`: geometric scan
    /// from below, then bisection inside the first violating bracket.
    fn radius(&self, dir: &DVector<f64>, eps: f64, cap: f64, tol: f64) -> (f64, bool) {
        const SCAN: i32 = 24;
        let mut lo = 0.0;
        let mut hi = None;
        for k in (0..=SCAN).rev() {
            let d = cap * 0.5f64.powi(k);
            if self.distance(dir, d) > eps {
                hi = Some(d);
                break;
            }
            lo = d;
        }
        let Some(mut hi) = hi else {
            return (cap, true);
        };
        while hi - lo > tol * hi {
            let mid = 0.5 * (lo + hi);
            if self.distance(dir, mid) > eps {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        (0.5 * (lo + hi), false)
    }
}

fn check_labeled(data: &Dataset) -> Result<DVector<f64>> {
    if !data.unlabeled_idx.is_empty() {
        return Err(Error::Contract("instance complexity needs every instance labeled".into()));
    }
    Ok(DVector::from_fn(data.n(), |i, _| data.y(i)))
}

fn base_model(data: &Dataset, gram: &GramPair, lambda: f64) -> Result<(Expansion, DVector<f64>)> {
    let y = check_labeled(data)?;
    let coef = train(&gram.k, &y, lambda);
    Ok((Expansion { points: data.features.clone(), coef }, y))
}

fn norm_of(spec: &KernelSpec, f: &Expansion) -> f64 {
    f.coef.dot(&(cross_gram(spec, &f.points, &f.points) * &f.coef)).max(0.0).sqrt()
}

/// Gradient of `f` at `x_i` by central differences.
fn gradient_direction(spec: &KernelSpec, f: &Expansion, i: usize) -> Option<DVector<f64>> {
    let dim = f.points.ncols();
    let x: Vec<f64> = f.points.row(i).iter().copied().collect();
    let eval = |z: &[f64]| spec.row(&f.points, z).dot(&f.coef);
    let h = 1e-5;
    let g = DVector::from_fn(dim, |j, _| {
        let mut a = x.clone();
        let mut b = x.clone();
        a[j] += h;
        b[j] -= h;
        (eval(&a) - eval(&b)) / (2.0 * h)
    });
    let n = g.norm();
    (n > 1e-12).then(|| g / n)
}

fn directions(dim: usize, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let v = DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
        let n: f64 = v.norm();
        if n > 1e-12 {
            out.push(v / n);
        }
    }
    out
}

fn epsilon_for(settings: &ComplexitySettings, spec: &KernelSpec, base: &Expansion) -> Result<f64> {
    let eps = settings.epsilon.unwrap_or_else(|| 0.1 * norm_of(spec, base));
    if eps > 0.0 {
        Ok(eps)
    } else {
        Err(Error::Config(format!("epsilon {eps} must be positive")))
    }
}

fn score_one(
    data: &Dataset,
    gram: &GramPair,
    base: &Expansion,
    y: &DVector<f64>,
    i: usize,
    eps: f64,
    settings: &ComplexitySettings,
) -> (f64, bool) {
    let cap = settings.cap_factor * data.diameter().max(1e-12);
    let probe = Probe {
        spec: gram.spec,
        base: Expansion { points: base.points.clone(), coef: base.coef.clone() },
        k: &gram.k,
        y: y.clone(),
        lambda: settings.lambda,
        i,
    };
    // Seeding from the coordinates keeps scores independent of row order.
    let seed = data.features.row(i).iter().fold(settings.seed, |h, v| h.rotate_left(17) ^ v.to_bits());
    let mut dirs = directions(data.dim(), settings.probes, seed);
    if let Some(g) = gradient_direction(&gram.spec, base, i) {
        dirs.push(-&g);
        dirs.push(g);
    }
    let mut best = cap;
    let mut all_capped = true;
    for dir in &dirs {
        let (d, capped) = probe.radius(dir, eps, cap, settings.tol);
        all_capped &= capped;
        best = best.min(d);
    }
    (1.0 / best, all_capped)
}

/// Complexity score `1/d*` of instance `i`, and whether the radius cap was
/// reached in every direction.
pub fn instance_complexity(
    data: &Dataset,
    gram: &GramPair,
    i: usize,
    settings: &ComplexitySettings,
) -> Result<(f64, bool)> {
    if i >= data.n() {
        return Err(Error::Contract(format!("instance {i} out of range")));
    }
    let (base, y) = base_model(data, gram, settings.lambda)?;
    let eps = epsilon_for(settings, &gram.spec, &base)?;
    Ok(score_one(data, gram, &base, &y, i, eps, settings))
}

/// Scores every instance.
pub fn score_all(data: &Dataset, gram: &GramPair, settings: &ComplexitySettings) -> Result<ComplexityReport> {
    let (base, y) = base_model(data, gram, settings.lambda)?;
    let eps = epsilon_for(settings, &gram.spec, &base)?;
    let mut scores = Vec::with_capacity(data.n());
    let mut capped = Vec::new();
    for i in 0..data.n() {
        let (s, c) = score_one(data, gram, &base, &y, i, eps, settings);
        scores.push(s);
        if c {
            capped.push(i);
        }
    }
    let mut ranking: Vec<usize> = (0..scores.len()).collect();
    ranking.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    Ok(ComplexityReport { scores, epsilon: eps, probes: settings.probes, ranking, capped })
}

/// The `n_o` most complex instances.
pub fn rank_noisy(report: &ComplexityReport, n_o: usize) -> Vec<usize> {
    let mut top: Vec<usize> = report.ranking.iter().copied().take(n_o).collect();
    top.sort_unstable();
    top
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{two_gaussians, SyntheticSpec};

    #[test]
    fn symmetric_pair_has_equal_scores() {
        let x = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 1.0, 0.0]);
        let d = Dataset::labeled(x, &[-1, 1]).unwrap();
        let g = GramPair::default_for(&d.features).unwrap();
        // Random directions are not mirror images, so probe the gradient only.
        let settings = ComplexitySettings { probes: 0, ..ComplexitySettings::default() };
        let r = score_all(&d, &g, &settings).unwrap();
        assert!((r.scores[0] - r.scores[1]).abs() <= 2e-3 * r.scores[0], "{:?}", r.scores);
    }

    #[test]
    fn flipped_point_is_most_complex() {
        let x = DMatrix::from_row_slice(
            8,
            2,
            &[2.0, 0.5, 3.0, -0.5, 2.5, 1.5, 3.5, 0.0, -2.0, 0.5, -3.0, -0.5, -2.5, 1.5, -3.5, 0.0],
        );
        let mut y = [1, 1, 1, 1, -1, -1, -1, -1];
        y[1] = -1;
        let d = Dataset::labeled(x, &y).unwrap();
        let g = GramPair::default_for(&d.features).unwrap();
        let r = score_all(&d, &g, &ComplexitySettings::default()).unwrap();
        assert_eq!(r.ranking[0], 1, "{:?}", r.scores);
    }

    #[test]
    fn huge_epsilon_gives_cap_scores() {
        let spec = SyntheticSpec { n: 5, dim: 2, separation: 3.0, margin: 0.0, labeled: 5 };
        let d = two_gaussians(&spec, 1).unwrap();
        let g = GramPair::default_for(&d.features).unwrap();
        let settings = ComplexitySettings { epsilon: Some(1e6), probes: 2, ..ComplexitySettings::default() };
        let r = score_all(&d, &g, &settings).unwrap();
        let cap = 10.0 * d.diameter();
        assert_eq!(r.capped.len(), 5);
        assert!(r.scores.iter().all(|&s| (s - 1.0 / cap).abs() < 1e-12));
    }

    #[test]
    fn rank_noisy_edges() {
        let r = ComplexityReport {
            scores: vec![0.5, 2.0, 2.0, 1.0],
            epsilon: 0.1,
            probes: 1,
            ranking: vec![1, 2, 3, 0],
            capped: vec![],
        };
        assert!(rank_noisy(&r, 0).is_empty());
        assert_eq!(rank_noisy(&r, 4), vec![0, 1, 2, 3]);
        assert_eq!(rank_noisy(&r, 2), vec![1, 2]);
    }

    #[test]
    fn unlabeled_instance_is_rejected() {
        let spec = SyntheticSpec { n: 5, dim: 2, separation: 3.0, margin: 0.0, labeled: 2 };
        let d = two_gaussians(&spec, 1).unwrap();
        let g = GramPair::default_for(&d.features).unwrap();
        assert!(matches!(
            instance_complexity(&d, &g, 0, &ComplexitySettings::default()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn scores_are_permutation_equivariant() {
        let spec = SyntheticSpec { n: 6, dim: 2, separation: 3.0, margin: 0.5, labeled: 6 };
        let d = two_gaussians(&spec, 3).unwrap();
        let perm = [3, 0, 5, 1, 4, 2];
        let pd = d.subset(&perm).unwrap();
        let settings = ComplexitySettings { probes: 4, ..ComplexitySettings::default() };
        let g = GramPair::default_for(&d.features).unwrap();
        let pg = GramPair::default_for(&pd.features).unwrap();
        let a = score_all(&d, &g, &settings).unwrap();
        let b = score_all(&pd, &pg, &settings).unwrap();
        for (k, &j) in perm.iter().enumerate() {
            assert!((b.scores[k] - a.scores[j]).abs() <= 1e-2 * a.scores[j], "{} vs {}", b.scores[k], a.scores[j]);
        }
    }
}
