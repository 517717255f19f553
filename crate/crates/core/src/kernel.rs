//! Kernels and Gram matrices.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Linear,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    #[serde(default = "one")]
    pub bandwidth: f64,
    #[serde(default = "default_jitter")]
    pub jitter: f64,
}

fn one() -> f64 {
    1.0
}

pub const DEFAULT_JITTER: f64 = 1e-8;

fn default_jitter() -> f64 {
    DEFAULT_JITTER
}

impl KernelSpec {
    pub fn gaussian(bandwidth: f64) -> Self {
        KernelSpec { kind: KernelKind::Gaussian, bandwidth, jitter: DEFAULT_JITTER }
    }

    pub fn linear() -> Self {
        KernelSpec { kind: KernelKind::Linear, bandwidth: 1.0, jitter: DEFAULT_JITTER }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == KernelKind::Gaussian && !(self.bandwidth > 0.0) {
            return Err(Error::Config(format!("bandwidth {} must be positive", self.bandwidth)));
        }
        if !(self.jitter >= 0.0) {
            return Err(Error::Config(format!("jitter {} must be nonnegative", self.jitter)));
        }
        Ok(())
    }

    /// Kernel value without jitter.
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.kind {
            KernelKind::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            KernelKind::Gaussian => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-d2 / (2.0 * self.bandwidth * self.bandwidth)).exp()
            }
        }
    }

    /// Kernel values between every training row and `x`.
    pub fn row(&self, features: &DMatrix<f64>, x: &[f64]) -> DVector<f64> {
        DVector::from_fn(features.nrows(), |i, _| {
            let r: Vec<f64> = features.row(i).iter().copied().collect();
            self.eval(&r, x)
        })
    }
}

/// Gram matrix of the rows of `features`, with jitter on the diagonal.
pub fn compute_gram(features: &DMatrix<f64>, spec: &KernelSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let n = features.nrows();
    if n == 0 {
        return Err(Error::Contract("Gram matrix of an empty dataset".into()));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite feature value".into()));
    }
    let rows: Vec<Vec<f64>> = (0..n).map(|i| features.row(i).iter().copied().collect()).collect();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = spec.eval(&rows[i], &rows[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        k[(i, i)] += spec.jitter;
    }
    Ok(k)
}

/// Median of the pairwise Euclidean distances, or 1 when undefined.
pub fn median_distance(features: &DMatrix<f64>) -> f64 {
    let n = features.nrows();
    let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            d.push((features.row(i) - features.row(j)).norm());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len() / 2;
    let med = if d.len() % 2 == 0 { 0.5 * (d[m - 1] + d[m]) } else { d[m] };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

/// Kernel pair: `k` for the simple classifier, `k_o` for the complex one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramPair {
    pub k: DMatrix<f64>,
    pub k_o: DMatrix<f64>,
    pub spec: KernelSpec,
    pub spec_o: KernelSpec,
}

/// Ratio between the complex and the simple kernel bandwidths.
pub const COMPLEX_BANDWIDTH_RATIO: f64 = 0.25;

impl GramPair {
    pub fn new(features: &DMatrix<f64>, spec: KernelSpec, spec_o: KernelSpec) -> Result<Self> {
        Ok(GramPair {
            k: compute_gram(features, &spec)?,
            k_o: compute_gram(features, &spec_o)?,
            spec,
            spec_o,
        })
    }

    /// Gaussian pair with bandwidths tied to the median pairwise distance.
    pub fn default_for(features: &DMatrix<f64>) -> Result<Self> {
        let h = median_distance(features);
        GramPair::new(
            features,
            KernelSpec::gaussian(h),
            KernelSpec::gaussian(COMPLEX_BANDWIDTH_RATIO * h),
        )
    }

    pub fn n(&self) -> usize {
        self.k.nrows()
    }

    pub fn subset(&self, rows: &[usize]) -> GramPair {
        GramPair {
            k: self.k.select_rows(rows).select_columns(rows),
            k_o: self.k_o.select_rows(rows).select_columns(rows),
            spec: self.spec,
            spec_o: self.spec_o,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::min_eigenvalue;
    use proptest::prelude::*;

    #[test]
    fn gaussian_self_similarity_is_one_plus_jitter() {
        let x = DMatrix::from_row_slice(2, 2, &[0.3, -1.0, 0.3, -1.0]);
        let spec = KernelSpec { kind: KernelKind::Gaussian, bandwidth: 0.7, jitter: 1e-3 };
        let k = compute_gram(&x, &spec).unwrap();
        assert_eq!(k[(0, 0)], 1.0 + 1e-3);
        assert_eq!(k[(0, 1)], 1.0);
    }

    #[test]
    fn linear_orthogonal_vectors() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let spec = KernelSpec { kind: KernelKind::Linear, bandwidth: 1.0, jitter: 0.0 };
        let k = compute_gram(&x, &spec).unwrap();
        assert_eq!(k[(0, 1)], 0.0);
        assert_eq!(k[(1, 1)], 1.0);
    }

    #[test]
    fn gaussian_matches_pairwise_formula() {
        let x = DMatrix::from_row_slice(3, 2, &[0.1, 0.2, -0.5, 1.1, 2.0, -0.3]);
        let bw = 0.9;
        let spec = KernelSpec { kind: KernelKind::Gaussian, bandwidth: bw, jitter: 0.0 };
        let k = compute_gram(&x, &spec).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let dx = x[(i, 0)] - x[(j, 0)];
                let dy = x[(i, 1)] - x[(j, 1)];
                let expect = (-(dx * dx + dy * dy) / (2.0 * bw * bw)).exp();
                assert!((k[(i, j)] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn non_finite_feature_is_numeric_error() {
        let x = DMatrix::from_row_slice(2, 1, &[0.0, f64::NAN]);
        assert!(matches!(
            compute_gram(&x, &KernelSpec::linear()),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn bad_bandwidth_is_config_error() {
        let x = DMatrix::from_row_slice(1, 1, &[0.0]);
        assert!(compute_gram(&x, &KernelSpec::gaussian(0.0)).is_err());
    }

    #[test]
    fn median_distance_of_three_collinear_points() {
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 3.0]);
        // Distances 1, 2, 3.
        assert_eq!(median_distance(&x), 2.0);
    }

    proptest! {
        #[test]
        fn gram_is_symmetric_psd(
            pts in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 2), 1..10),
            bw in 0.2f64..3.0,
            linear in any::<bool>(),
        ) {
            let n = pts.len();
            let x = DMatrix::from_fn(n, 2, |i, j| pts[i][j]);
            let spec = if linear { KernelSpec::linear() } else { KernelSpec::gaussian(bw) };
            let k = compute_gram(&x, &spec).unwrap();
            prop_assert!((&k - k.transpose()).amax() <= 1e-12);
            prop_assert!(min_eigenvalue(&k) >= -1e-8);
        }
    }
}
