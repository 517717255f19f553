//! Carrying a solved state into the next active-learning round.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::nesterov::Accumulator;
use super::prox::DualIterate;
use crate::error::{Error, Result};
use crate::ral::{slack_values, RalProblem, RowKey, SaddlePoint};

/// Solver state saved at the end of a round, together with the layout it
/// was solved under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmStartState {
    pub point: SaddlePoint,
    pub dual: Option<DualIterate>,
    pub accumulator: Option<Accumulator>,
    pub candidates: Vec<usize>,
    pub labeled: Vec<bool>,
}

impl WarmStartState {
    pub fn new(problem: &RalProblem, point: SaddlePoint, dual: Option<DualIterate>, accumulator: Option<Accumulator>) -> Self {
        WarmStartState { point, dual, accumulator, candidates: problem.candidates.clone(), labeled: problem.labeled.clone() }
    }

    /// Whether the state was produced under the layout of `problem`.
    pub fn matches(&self, problem: &RalProblem) -> bool {
        self.candidates == problem.candidates
            && self.labeled == problem.labeled
            && self.point.x.lifted.nrows() == problem.dim()
            && self.point.x.s.len() == problem.ops.n_ineq()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelAdded {
    pub index: usize,
    pub label: i8,
}

/// Maps `old` onto `problem`, the problem assembled after `changes`.
///
/// Surviving coordinates are copied by data index and row key. A newly
/// labeled point leaves the query block with `q = 0`; its data row, lift
/// entry and α are kept. Multipliers of new rows start at zero and the
/// estimate-sequence accumulator is dropped.
pub fn carry_warm_start(old: &WarmStartState, changes: &[LabelAdded], problem: &RalProblem) -> Result<WarmStartState> {
    if changes.is_empty() {
        if !old.matches(problem) {
            return Err(Error::Contract("warm state does not match the problem layout".into()));
        }
        return Ok(old.clone());
    }
    let n = problem.n;
    if old.labeled.len() != n || old.point.alpha.len() != n {
        return Err(Error::Contract(format!("warm state has {} points, problem has {n}", old.labeled.len())));
    }
    let mut labeled = old.labeled.clone();
    let mut candidates = old.candidates.clone();
    for ch in changes {
        if ch.index >= n || labeled[ch.index] {
            return Err(Error::Contract(format!("point {} cannot receive a new label", ch.index)));
        }
        if problem.y[ch.index] != f64::from(ch.label) {
            return Err(Error::Contract(format!("label of point {} differs from the problem", ch.index)));
        }
        labeled[ch.index] = true;
        candidates.retain(|&c| c != ch.index);
    }
    if labeled != problem.labeled || candidates != problem.candidates {
        return Err(Error::Contract("changes do not produce the problem layout".into()));
    }

    // Lifted index map: data rows stay, query rows follow their candidate,
    // the corner moves to the end.
    let old_pos: HashMap<usize, usize> = old.candidates.iter().enumerate().map(|(k, &i)| (i, n + k)).collect();
    let old_corner = n + old.candidates.len();
    let mut map = Vec::with_capacity(problem.dim());
    map.extend(0..n);
    map.extend(problem.candidates.iter().map(|i| old_pos[i]));
    map.push(old_corner);
    let remap = |m: &DMatrix<f64>| DMatrix::from_fn(map.len(), map.len(), |a, b| m[(map[a], map[b])]);

    let ox = &old.point.x;
    let mut x = ox.clone();
    x.lifted = remap(&ox.lifted);
    for ch in changes {
        x.q[ch.index] = 0.0;
    }
    x.s = slack_values(problem, &x);
    let old_ineq_keys: HashMap<RowKey, usize> = match &old.dual {
        Some(d) => d.keys[d.n_eq..].iter().enumerate().map(|(k, &key)| (key, k)).collect(),
        None => HashMap::new(),
    };
    // Keep old slacks on rows that survive; they match the old multipliers.
    for (k, row) in problem.ops.rows[problem.ops.n_eq..].iter().enumerate() {
        if let Some(&j) = old_ineq_keys.get(&row.key) {
            if j < ox.s.len() {
                x.s[k] = ox.s[j];
            }
        }
    }

    let dual = old.dual.as_ref().map(|d| {
        let by_key: HashMap<RowKey, usize> = d.keys.iter().enumerate().map(|(k, &key)| (key, k)).collect();
        let keys: Vec<RowKey> = problem.ops.rows.iter().map(|r| r.key).collect();
        let y = DVector::from_iterator(keys.len(), keys.iter().map(|k| by_key.get(k).map_or(0.0, |&j| d.y[j])));
        let v = DVector::from_iterator(
            problem.ops.n_ineq(),
            keys[problem.ops.n_eq..].iter().map(|k| match by_key.get(k) {
                Some(&j) if j >= d.n_eq => d.v[j - d.n_eq],
                _ => 0.0,
            }),
        );
        let mut z_q = d.z_q.clone();
        for ch in changes {
            z_q[ch.index] = 0.0;
        }
        DualIterate { keys, n_eq: problem.ops.n_eq, y, s_psd: remap(&d.s_psd), z_p: d.z_p.clone(), z_q, v }
    });

    Ok(WarmStartState {
        point: SaddlePoint { x, alpha: old.point.alpha.clone() },
        dual,
        accumulator: None,
        candidates,
        labeled,
    })
}
