//! Affine constraint rows of the relaxed problem and their adjoints.
//!
//! Every row reads `⟨a_r, u⟩ + ⟨e_r, β⟩ − b_r = 0` for equalities and
//! `= s_r ≥ 0` for inequalities, with `u = (G, p, q)`. The β coefficients
//! `e_r` are stored densely; in operator notation `B = −E`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Stable identity of a row. Data indices refer to the dataset, so keys
/// survive a label being added between rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RowKey {
    /// Corner entry of the lifted matrix equals 1.
    Corner,
    /// `G_ii + p_i + q_i = 1`.
    DataDiag(usize),
    /// `G_kk − q_i = 0` for the query row of candidate `i`.
    QueryDiag(usize),
    /// `G_ic + y_i p_i = y_i` for labeled `i`.
    LabeledLift(usize),
    /// `G_kc − q_i = 0` for candidate `i`.
    QueryLift(usize),
    /// `G_ii + y_i (K_o β)_i = 1` for labeled `i`.
    Coupling(usize),
    /// `G_ii − G_ic ≥ 0` for unlabeled `i`.
    LiftUpper(usize),
    /// `G_ii + G_ic ≥ 0` for unlabeled `i`.
    LiftLower(usize),
    /// `p_i − (K_o β)_i ≥ 0`.
    NoiseUpper(usize),
    /// `p_i + (K_o β)_i ≥ 0`.
    NoiseLower(usize),
    /// `1 − q_i − (K_o β)_i ≥ 0` for unlabeled `i`.
    QueryUpper(usize),
    /// `1 − q_i + (K_o β)_i ≥ 0` for unlabeled `i`.
    QueryLower(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowClass {
    /// Equalities on `u` only.
    Ec,
    /// Equalities coupled to β.
    Ev,
    /// Inequalities on `u` only.
    Ic,
    /// Inequalities coupled to β.
    Iv,
}

impl RowClass {
    pub fn is_equality(self) -> bool {
        matches!(self, RowClass::Ec | RowClass::Ev)
    }
}

#[derive(Debug, Clone)]
pub struct Row {
    pub key: RowKey,
    pub class: RowClass,
    /// Lifted-matrix entries `(i, j, c)` meaning `c · G_ij` with `i ≤ j`.
    pub g: Vec<(usize, usize, f64)>,
    pub p: Vec<(usize, f64)>,
    pub q: Vec<(usize, f64)>,
    pub rhs: f64,
}

/// All constraint rows, equalities first.
#[derive(Debug, Clone)]
pub struct ConstraintOperators {
    pub rows: Vec<Row>,
    pub n_eq: usize,
    /// β coefficients, one row per constraint.
    pub e: DMatrix<f64>,
    /// Side of the lifted matrix.
    pub dim: usize,
    pub n: usize,
}

impl ConstraintOperators {
    pub fn new(mut rows: Vec<(Row, Option<DVector<f64>>)>, dim: usize, n: usize) -> Self {
        rows.sort_by_key(|(r, _)| !r.class.is_equality());
        let n_eq = rows.iter().filter(|(r, _)| r.class.is_equality()).count();
        let mut e = DMatrix::zeros(rows.len(), n);
        for (k, (_, beta)) in rows.iter().enumerate() {
            if let Some(b) = beta {
                e.set_row(k, &b.transpose());
            }
        }
        ConstraintOperators { rows: rows.into_iter().map(|(r, _)| r).collect(), n_eq, e, dim, n }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_ineq(&self) -> usize {
        self.rows.len() - self.n_eq
    }

    pub fn rhs(&self) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.rows.iter().map(|r| r.rhs))
    }

    pub fn indices_of(&self, class: RowClass) -> Vec<usize> {
        (0..self.len()).filter(|&k| self.rows[k].class == class).collect()
    }

    /// `A(u)`: the `u` part of every row.
    pub fn apply_u(&self, g: &DMatrix<f64>, p: &DVector<f64>, q: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.len(),
            self.rows.iter().map(|r| {
                r.g.iter().map(|&(i, j, c)| c * g[(i, j)]).sum::<f64>()
                    + r.p.iter().map(|&(i, c)| c * p[i]).sum::<f64>()
                    + r.q.iter().map(|&(i, c)| c * q[i]).sum::<f64>()
            }),
        )
    }

    /// `E β`.
    pub fn apply_beta(&self, beta: &DVector<f64>) -> DVector<f64> {
        &self.e * beta
    }

    /// `A*(y)` as a symmetric matrix plus the `p` and `q` parts.
    pub fn adjoint_u(&self, y: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
        let mut g = DMatrix::zeros(self.dim, self.dim);
        let mut p = DVector::zeros(self.n);
        let mut q = DVector::zeros(self.n);
        for (r, &yr) in self.rows.iter().zip(y.iter()) {
            if yr == 0.0 {
                continue;
            }
            for &(i, j, c) in &r.g {
                if i == j {
                    g[(i, i)] += c * yr;
                } else {
                    g[(i, j)] += 0.5 * c * yr;
                    g[(j, i)] += 0.5 * c * yr;
                }
            }
            for &(i, c) in &r.p {
                p[i] += c * yr;
            }
            for &(i, c) in &r.q {
                q[i] += c * yr;
            }
        }
        (g, p, q)
    }

    /// `Eᵀ y`.
    pub fn adjoint_beta(&self, y: &DVector<f64>) -> DVector<f64> {
        self.e.tr_mul(y)
    }

    /// Row Gram matrix `A A*` of the `u` parts.
    pub fn gram_u(&self) -> DMatrix<f64> {
        use std::collections::HashMap;
        // Canonical coordinates: off-diagonal entries of G carry weight ½.
        #[derive(Hash, PartialEq, Eq)]
        enum Coord {
            G(usize, usize),
            P(usize),
            Q(usize),
        }
        let mut by_coord: HashMap<Coord, Vec<(usize, f64)>> = HashMap::new();
        for (k, r) in self.rows.iter().enumerate() {
            for &(i, j, c) in &r.g {
                by_coord.entry(Coord::G(i.min(j), i.max(j))).or_default().push((k, c));
            }
            for &(i, c) in &r.p {
                by_coord.entry(Coord::P(i)).or_default().push((k, c));
            }
            for &(i, c) in &r.q {
                by_coord.entry(Coord::Q(i)).or_default().push((k, c));
            }
        }
        let mut m = DMatrix::zeros(self.len(), self.len());
        for (coord, list) in by_coord {
            let w = match coord {
                Coord::G(i, j) if i != j => 0.5,
                _ => 1.0,
            };
            for &(a, ca) in &list {
                for &(b, cb) in &list {
                    m[(a, b)] += w * ca * cb;
                }
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> ConstraintOperators {
        let rows = vec![
            (
                Row {
                    key: RowKey::Corner,
                    class: RowClass::Ec,
                    g: vec![(2, 2, 1.0)],
                    p: vec![],
                    q: vec![],
                    rhs: 1.0,
                },
                None,
            ),
            (
                Row {
                    key: RowKey::LiftUpper(0),
                    class: RowClass::Ic,
                    g: vec![(0, 0, 1.0), (0, 2, -1.0)],
                    p: vec![],
                    q: vec![],
                    rhs: 0.0,
                },
                None,
            ),
            (
                Row {
                    key: RowKey::LabeledLift(1),
                    class: RowClass::Ec,
                    g: vec![(1, 2, 1.0)],
                    p: vec![(1, -1.0)],
                    q: vec![],
                    rhs: -1.0,
                },
                Some(DVector::from_vec(vec![0.5, 0.25])),
            ),
        ];
        ConstraintOperators::new(rows, 3, 2)
    }

    #[test]
    fn equalities_come_first() {
        let ops = toy();
        assert_eq!(ops.n_eq, 2);
        assert!(ops.rows[..2].iter().all(|r| r.class.is_equality()));
        assert_eq!(ops.e[(1, 0)], 0.5);
    }

    #[test]
    fn gram_matches_adjoint_inner_products() {
        let ops = toy();
        let m = ops.gram_u();
        for a in 0..ops.len() {
            for b in 0..ops.len() {
                let mut ya = DVector::zeros(ops.len());
                ya[a] = 1.0;
                let mut yb = DVector::zeros(ops.len());
                yb[b] = 1.0;
                let (ga, pa, qa) = ops.adjoint_u(&ya);
                let (gb, pb, qb) = ops.adjoint_u(&yb);
                let ip = ga.dot(&gb) + pa.dot(&pb) + qa.dot(&qb);
                assert!((ip - m[(a, b)]).abs() < 1e-15);
            }
        }
    }
}
