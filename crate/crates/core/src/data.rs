//! Datasets with partially known labels, CSV loading and synthetic generators.

use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pool of instances. Row `i` of `features` is instance `i`.
///
/// `labels[i]` is `Some(±1)` for labeled instances and `None` otherwise.
/// `ground_truth` is only used by the simulation harness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub ids: Vec<String>,
    pub features: DMatrix<f64>,
    pub labels: Vec<Option<i8>>,
    pub ground_truth: Option<Vec<i8>>,
    pub labeled_idx: Vec<usize>,
    pub unlabeled_idx: Vec<usize>,
    pub candidate_idx: Vec<usize>,
}

impl Dataset {
    /// Builds a dataset; every unlabeled instance becomes a query candidate.
    pub fn new(
        features: DMatrix<f64>,
        labels: Vec<Option<i8>>,
        ground_truth: Option<Vec<i8>>,
    ) -> Result<Self> {
        let n = features.nrows();
        if labels.len() != n {
            return Err(Error::Contract(format!(
                "{} labels for {} instances",
                labels.len(),
                n
            )));
        }
        if let Some(t) = &ground_truth {
            if t.len() != n {
                return Err(Error::Contract(format!(
                    "{} ground-truth labels for {} instances",
                    t.len(),
                    n
                )));
            }
            if t.iter().any(|&y| y != 1 && y != -1) {
                return Err(Error::Contract("ground truth must be ±1".into()));
            }
        }
        if labels.iter().flatten().any(|&y| y != 1 && y != -1) {
            return Err(Error::Contract("labels must be ±1 or unknown".into()));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite feature value".into()));
        }
        let labeled_idx: Vec<usize> = (0..n).filter(|&i| labels[i].is_some()).collect();
        let unlabeled_idx: Vec<usize> = (0..n).filter(|&i| labels[i].is_none()).collect();
        Ok(Dataset {
            ids: (0..n).map(|i| i.to_string()).collect(),
            features,
            labels,
            ground_truth,
            candidate_idx: unlabeled_idx.clone(),
            labeled_idx,
            unlabeled_idx,
        })
    }

    /// Fully labeled dataset from ±1 labels.
    pub fn labeled(features: DMatrix<f64>, y: &[i8]) -> Result<Self> {
        Dataset::new(features, y.iter().map(|&v| Some(v)).collect(), Some(y.to_vec()))
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Label as a real number, 0 for unknown.
    pub fn y(&self, i: usize) -> f64 {
        self.labels[i].map_or(0.0, f64::from)
    }

    pub fn is_labeled(&self, i: usize) -> bool {
        self.labels[i].is_some()
    }

    /// Restricts the query candidates to a subset of the unlabeled pool.
    pub fn with_candidates(mut self, candidates: Vec<usize>) -> Result<Self> {
        for &c in &candidates {
            if c >= self.n() || self.labels[c].is_some() {
                return Err(Error::Contract(format!(
                    "candidate {c} is not an unlabeled instance"
                )));
            }
        }
        let mut c = candidates;
        c.sort_unstable();
        c.dedup();
        self.candidate_idx = c;
        Ok(self)
    }

    /// Records a label and moves the instance to the labeled block.
    pub fn set_label(&mut self, i: usize, y: i8) -> Result<()> {
        if i >= self.n() {
            return Err(Error::Contract(format!("index {i} out of range")));
        }
        if y != 1 && y != -1 {
            return Err(Error::Contract(format!("label {y} is not ±1")));
        }
        if self.labels[i].is_some() {
            return Err(Error::Contract(format!("instance {i} is already labeled")));
        }
        self.labels[i] = Some(y);
        self.unlabeled_idx.retain(|&j| j != i);
        self.candidate_idx.retain(|&j| j != i);
        let pos = self.labeled_idx.partition_point(|&j| j < i);
        self.labeled_idx.insert(pos, i);
        Ok(())
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.features.row(i).iter().copied().collect()
    }

    /// Largest pairwise Euclidean distance.
    pub fn diameter(&self) -> f64 {
        let n = self.n();
        let mut best = 0.0_f64;
        for i in 0..n {
            for j in (i + 1)..n {
                best = best.max((self.features.row(i) - self.features.row(j)).norm());
            }
        }
        best
    }

    /// Subset of rows, keeping labels, truth and candidate status.
    pub fn subset(&self, rows: &[usize]) -> Result<Dataset> {
        let features = self.features.select_rows(rows);
        let labels = rows.iter().map(|&i| self.labels[i]).collect();
        let truth = self
            .ground_truth
            .as_ref()
            .map(|t| rows.iter().map(|&i| t[i]).collect());
        let mut out = Dataset::new(features, labels, truth)?;
        out.ids = rows.iter().map(|&i| self.ids[i].clone()).collect();
        let cands = rows
            .iter()
            .enumerate()
            .filter(|(_, i)| self.candidate_idx.contains(i))
            .map(|(k, _)| k)
            .collect();
        out.with_candidates(cands)
    }
}

/// Reads a dataset from CSV.
///
/// Columns: id, features..., label (`1`, `-1` or `?`). A header row is
/// recognized when its first field is not numeric; a trailing column named
/// `truth` then holds ground-truth labels.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Parse { line: 0, message: format!("{other:?}") },
        })?;
    let mut has_truth = false;
    let mut width: Option<usize> = None;
    let mut ids = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    let mut truth = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let line = k + 1;
        let record = record.map_err(|e| Error::Parse { line, message: e.to_string() })?;
        if k == 0 {
            let first_feature = record.get(1).unwrap_or("");
            if first_feature.parse::<f64>().is_err() {
                has_truth = record
                    .iter()
                    .last()
                    .is_some_and(|h| h.eq_ignore_ascii_case("truth"));
                width = Some(record.len());
                continue;
            }
        }
        let fields: Vec<&str> = record.iter().collect();
        match width {
            None => width = Some(fields.len()),
            Some(w) if w != fields.len() => {
                return Err(Error::Schema {
                    line,
                    message: format!("expected {w} columns, found {}", fields.len()),
                })
            }
            _ => {}
        }
        let min = if has_truth { 4 } else { 3 };
        if fields.len() < min {
            return Err(Error::Schema {
                line,
                message: format!("need at least {min} columns, found {}", fields.len()),
            });
        }
        let label_col = if has_truth { fields.len() - 2 } else { fields.len() - 1 };
        ids.push(fields[0].to_string());
        let mut feats = Vec::with_capacity(label_col - 1);
        for f in &fields[1..label_col] {
            let v: f64 = f.parse().map_err(|_| Error::Parse {
                line,
                message: format!("feature `{f}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Numeric(format!("non-finite feature on line {line}")));
            }
            feats.push(v);
        }
        rows.push(feats);
        labels.push(parse_label(fields[label_col], line, true)?);
        if has_truth {
            let t = parse_label(fields[label_col + 1], line, false)?;
            truth.push(t.expect("truth is never unknown"));
        }
    }
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    let features = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
    let mut data = Dataset::new(features, labels, has_truth.then_some(truth))?;
    data.ids = ids;
    Ok(data)
}

fn parse_label(field: &str, line: usize, allow_unknown: bool) -> Result<Option<i8>> {
    match field {
        "?" if allow_unknown => Ok(None),
        "1" | "+1" | "1.0" => Ok(Some(1)),
        "-1" | "-1.0" => Ok(Some(-1)),
        other => Err(Error::Parse { line, message: format!("invalid label `{other}`") }),
    }
}

/// Writes a dataset in the format read by [`load_dataset`], with a header.
pub fn write_dataset(data: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    let mut header = vec!["id".to_string()];
    header.extend((0..data.dim()).map(|j| format!("x{j}")));
    header.push("label".into());
    if data.ground_truth.is_some() {
        header.push("truth".into());
    }
    w.write_record(&header).map_err(csv_io)?;
    for i in 0..data.n() {
        let mut rec = vec![data.ids[i].clone()];
        rec.extend(data.features.row(i).iter().map(|v| format!("{v:?}")));
        rec.push(data.labels[i].map_or("?".to_string(), |y| y.to_string()));
        if let Some(t) = &data.ground_truth {
            rec.push(t[i].to_string());
        }
        w.write_record(&rec).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse { line: 0, message: format!("{other:?}") },
    }
}

/// Synthetic generator settings: two isotropic Gaussians in `dim` dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_separation")]
    pub separation: f64,
    /// Minimum distance of every point from the true boundary, 0 to disable.
    #[serde(default)]
    pub margin: f64,
    /// Number of instances whose label starts known.
    pub labeled: usize,
}

fn default_dim() -> usize {
    2
}

fn default_separation() -> f64 {
    3.0
}

/// Draws `spec.n` points, half from each class, means `±separation/2` on the
/// first axis with unit variance. Labels are revealed for `spec.labeled`
/// points, balanced across classes when possible.
pub fn two_gaussians(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    if spec.n < 2 || spec.dim == 0 {
        return Err(Error::Config("synthetic data needs n ≥ 2 and dim ≥ 1".into()));
    }
    if spec.labeled > spec.n {
        return Err(Error::Config("more labeled points than points".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (points, truth) = sample_points(spec, &mut rng)?;
    let features = DMatrix::from_fn(spec.n, spec.dim, |i, j| points[i][j]);
    let labels = reveal_balanced(&truth, spec.labeled, &mut rng);
    Dataset::new(features, labels, Some(truth))
}

fn sample_points(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Result<(Vec<Vec<f64>>, Vec<i8>)> {
    let half = spec.separation / 2.0;
    let mut points = Vec::with_capacity(spec.n);
    let mut truth = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let y: i8 = if i % 2 == 0 { 1 } else { -1 };
        let mut attempts = 0;
        loop {
            attempts += 1;
            if attempts > 10_000 {
                return Err(Error::Config("margin too large for the separation".into()));
            }
            let mut x: Vec<f64> =
                (0..spec.dim).map(|_| StandardNormal.sample(rng)).collect();
            x[0] += f64::from(y) * half;
            // True boundary is x₀ = 0, so the signed margin is y·x₀.
            if f64::from(y) * x[0] >= spec.margin {
                points.push(x);
                truth.push(y);
                break;
            }
        }
    }
    Ok((points, truth))
}

fn reveal_balanced(truth: &[i8], count: usize, rng: &mut ChaCha8Rng) -> Vec<Option<i8>> {
    let n = truth.len();
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let mut labels = vec![None; n];
    let mut chosen = 0;
    // Alternate classes first so both are represented.
    for want in [1i8, -1] {
        if chosen >= count {
            break;
        }
        if let Some(&i) = order.iter().find(|&&i| truth[i] == want && labels[i].is_none()) {
            labels[i] = Some(truth[i]);
            chosen += 1;
        }
    }
    for &i in &order {
        if chosen >= count {
            break;
        }
        if labels[i].is_none() {
            labels[i] = Some(truth[i]);
            chosen += 1;
        }
    }
    labels
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_four_rows_two_labeled() {
        let f = write_tmp("a,0.0,1.0,1\nb,1.0,0.0,-1\nc,0.5,0.5,?\nd,2.0,2.0,?\n");
        let d = load_dataset(f.path()).unwrap();
        assert_eq!(d.n(), 4);
        assert_eq!(d.dim(), 2);
        assert_eq!(d.labeled_idx, vec![0, 1]);
        assert_eq!(d.unlabeled_idx, vec![2, 3]);
        assert_eq!(d.candidate_idx, vec![2, 3]);
        assert_eq!(d.ids[2], "c");
    }

    #[test]
    fn all_unknown_gives_empty_labeled_set() {
        let f = write_tmp("0,1.0,?\n1,2.0,?\n");
        let d = load_dataset(f.path()).unwrap();
        assert!(d.labeled_idx.is_empty());
        assert_eq!(d.unlabeled_idx.len(), 2);
    }

    #[test]
    fn inconsistent_width_is_schema_error_with_line() {
        let f = write_tmp("0,1.0,2.0,1\n1,1.0,2.0,3.0,-1\n");
        match load_dataset(f.path()) {
            Err(Error::Schema { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_value_is_parse_error_with_line() {
        let f = write_tmp("id,x,label\n0,1.0,1\n1,abc,-1\n");
        match load_dataset(f.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn header_with_truth_column() {
        let f = write_tmp("id,x0,label,truth\n0,1.0,?,1\n1,-1.0,-1,-1\n");
        let d = load_dataset(f.path()).unwrap();
        assert_eq!(d.ground_truth, Some(vec![1, -1]));
        assert_eq!(d.labels, vec![None, Some(-1)]);
    }

    #[test]
    fn write_then_load_round_trips() {
        let spec = SyntheticSpec { n: 10, dim: 3, separation: 3.0, margin: 0.0, labeled: 4 };
        let d = two_gaussians(&spec, 7).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_dataset(&d, f.path()).unwrap();
        let back = load_dataset(f.path()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn set_label_moves_instance() {
        let spec = SyntheticSpec { n: 6, dim: 2, separation: 3.0, margin: 0.0, labeled: 2 };
        let mut d = two_gaussians(&spec, 1).unwrap();
        let i = d.candidate_idx[0];
        d.set_label(i, 1).unwrap();
        assert!(d.labeled_idx.contains(&i));
        assert!(!d.unlabeled_idx.contains(&i));
        assert!(!d.candidate_idx.contains(&i));
        assert!(d.set_label(i, 1).is_err());
    }

    #[test]
    fn generator_respects_margin_and_balance() {
        let spec = SyntheticSpec { n: 12, dim: 2, separation: 3.0, margin: 0.5, labeled: 12 };
        let d = two_gaussians(&spec, 3).unwrap();
        let truth = d.ground_truth.clone().unwrap();
        for i in 0..12 {
            assert!(f64::from(truth[i]) * d.features[(i, 0)] >= 0.5);
        }
        assert_eq!(truth.iter().filter(|&&y| y == 1).count(), 6);
    }

    #[test]
    fn generator_is_seeded() {
        let spec = SyntheticSpec { n: 8, dim: 2, separation: 3.0, margin: 0.0, labeled: 3 };
        assert_eq!(two_gaussians(&spec, 5).unwrap(), two_gaussians(&spec, 5).unwrap());
    }
}
