//! Simulated active-learning experiments: noise injection, the query loop,
//! baselines, metrics and result export.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{load_dataset, two_gaussians, Dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::kernel::GramPair;
use crate::loss::hinge;
use crate::ral::{assemble, select_queries, Mode, RalConfig, RalProblem, SaddlePoint};
use crate::simple_complex::{fit_svm, SCModel, NOISY_THRESHOLD};
use crate::solver::warm::{carry_warm_start, LabelAdded, WarmStartState};
use crate::solver::{solve, SolverConfig};

/// Fraction of the pool held out as the clean test split.
pub const TEST_FRACTION: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    File(PathBuf),
    Synthetic(SyntheticSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    pub flip_rate: f64,
    pub outlier_count: usize,
    /// Outlier distance from the centroid in units of the data radius.
    pub outlier_scale: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec { flip_rate: 0.0, outlier_count: 0, outlier_scale: 10.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "ral")]
    Ral,
    #[serde(rename = "random")]
    Random,
    #[serde(rename = "margin")]
    Margin,
    #[serde(rename = "ral-lite")]
    RalLite,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Ral => "ral",
            Strategy::Random => "random",
            Strategy::Margin => "margin",
            Strategy::RalLite => "ral-lite",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    #[serde(default)]
    pub noise: NoiseSpec,
    pub rounds: usize,
    #[serde(default)]
    pub ral: RalConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Strategies run next to the main loop.
    #[serde(default)]
    pub baselines: Vec<Strategy>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.noise.flip_rate) {
            return Err(Error::Config(format!("flip_rate {} is outside [0, 1]", self.noise.flip_rate)));
        }
        if !(self.noise.outlier_scale > 0.0) {
            return Err(Error::Config("outlier_scale must be positive".into()));
        }
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.baselines.contains(&Strategy::Ral) {
            return Err(Error::Config("\"ral\" is the main loop, not a baseline".into()));
        }
        self.solver.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub test_accuracy: f64,
    pub queried: Vec<usize>,
    /// `None` when undefined: no noise budget, nothing flagged, or nothing injected.
    pub noisy_detection_precision: Option<f64>,
    pub noisy_detection_recall: Option<f64>,
    pub solver_iters: usize,
    pub warm_started: bool,
    /// Zero unless `solver.record_timing` is set, so exports stay reproducible.
    pub wall_ms: u64,
}

/// Decision functions of a solved relaxed problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RalModel {
    /// Coefficients of `f` over the pool: `α_i G_ic / λ`.
    pub coef: DVector<f64>,
    pub beta: DVector<f64>,
    pub p: DVector<f64>,
    pub q: DVector<f64>,
}

impl RalModel {
    pub fn from_solution(problem: &RalProblem, point: &SaddlePoint) -> Self {
        let lift = problem.lift(&point.x);
        let coef = DVector::from_fn(problem.n, |i, _| point.alpha[i] * lift[i] / problem.cfg.lambda);
        RalModel { coef, beta: point.x.beta.clone(), p: point.x.p.clone(), q: point.x.q.clone() }
    }

    /// `(f, f_o)` at the pool points.
    pub fn train_values(&self, gram: &GramPair) -> (DVector<f64>, DVector<f64>) {
        (&gram.k * &self.coef, &gram.k_o * &self.beta)
    }

    pub fn decision(&self, gram: &GramPair, pool: &DMatrix<f64>, x: &[f64]) -> f64 {
        gram.spec.row(pool, x).dot(&self.coef)
    }

    /// Fraction of `test` whose sign of `f` matches its label.
    pub fn accuracy(&self, gram: &GramPair, pool: &Dataset, test: &Dataset) -> f64 {
        accuracy(&Predictor::Ral(self), gram, pool, test)
    }

    /// Pool indices with `p ≥ 0.5`.
    pub fn suspected_noisy(&self) -> Vec<usize> {
        (0..self.p.len()).filter(|&i| self.p[i] >= NOISY_THRESHOLD).collect()
    }
}

/// A model usable for test predictions.
enum Predictor<'a> {
    Ral(&'a RalModel),
    Svm(DVector<f64>, Vec<usize>),
}

fn accuracy(pred: &Predictor<'_>, gram: &GramPair, pool: &Dataset, test: &Dataset) -> f64 {
    if test.n() == 0 {
        return 1.0;
    }
    let mut hits = 0;
    for t in 0..test.n() {
        let x = test.row(t);
        let f = match pred {
            Predictor::Ral(m) => m.decision(gram, &pool.features, &x),
            Predictor::Svm(coef, rows) => {
                rows.iter().zip(coef.iter()).map(|(&i, &c)| c * gram.spec.eval(&pool.row(i), &x)).sum()
            }
        };
        let label = if f >= 0.0 { 1.0 } else { -1.0 };
        if label == test.y(t) {
            hits += 1;
        }
    }
    hits as f64 / test.n() as f64
}

/// Flips `⌊flip_rate·n⌋` ground-truth labels (and the revealed label when
/// known) and appends `outlier_count` unlabeled points at
/// `outlier_scale × radius` from the centroid with random labels. Returns
/// the modified dataset and the sorted injected indices.
pub fn inject_noise(data: &Dataset, spec: &NoiseSpec, seed: u64) -> Result<(Dataset, Vec<usize>)> {
    let truth = data
        .ground_truth
        .clone()
        .ok_or_else(|| Error::Contract("noise injection needs ground-truth labels".into()))?;
    if !(0.0..=1.0).contains(&spec.flip_rate) {
        return Err(Error::Config(format!("flip_rate {} is outside [0, 1]", spec.flip_rate)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6e6f_6973_65);
    let n = data.n();
    let flips = (spec.flip_rate * n as f64 + 1e-9).floor() as usize;
    let mut injected: Vec<usize> = sample(&mut rng, n, flips.min(n)).into_iter().collect();
    let mut truth = truth;
    let mut labels = data.labels.clone();
    for &i in &injected {
        truth[i] = -truth[i];
        labels[i] = labels[i].map(|y| -y);
    }
    let mut rows: Vec<Vec<f64>> = (0..n).map(|i| data.row(i)).collect();
    if spec.outlier_count > 0 {
        let dim = data.dim();
        let centroid: Vec<f64> = (0..dim).map(|j| data.features.column(j).mean()).collect();
        let radius = rows
            .iter()
            .map(|r| r.iter().zip(&centroid).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
            .max(1e-12);
        for k in 0..spec.outlier_count {
            let mut dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            dir.iter_mut().for_each(|v| *v /= norm);
            rows.push(centroid.iter().zip(&dir).map(|(c, d)| c + spec.outlier_scale * radius * d).collect());
            truth.push(if rng.random_bool(0.5) { 1 } else { -1 });
            labels.push(None);
            injected.push(n + k);
        }
    }
    injected.sort_unstable();
    let total = rows.len();
    let features = DMatrix::from_fn(total, data.dim(), |i, j| rows[i][j]);
    let mut out = Dataset::new(features, labels, Some(truth))?;
    let mut ids = data.ids.clone();
    ids.extend((n..total).map(|i| format!("outlier-{}", i - n)));
    out.ids = ids;
    let candidates: Vec<usize> =
        out.unlabeled_idx.iter().copied().filter(|&i| i >= n || data.candidate_idx.contains(&i)).collect();
    let out = out.with_candidates(candidates)?;
    Ok((out, injected))
}

/// Pool, clean test split and gram matrices for one seed.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub pool: Dataset,
    pub test: Dataset,
    /// Injected noise, as pool indices.
    pub noisy: Vec<usize>,
    pub gram: GramPair,
}

/// Loads or generates the data, holds out a clean test split drawn from
/// unlabeled instances, then injects noise into the pool.
pub fn prepare(cfg: &ExperimentConfig, seed: u64) -> Result<Prepared> {
    let base = match &cfg.dataset {
        DatasetSource::File(path) => load_dataset(path)?,
        DatasetSource::Synthetic(spec) => two_gaussians(spec, seed)?,
    };
    let truth = base
        .ground_truth
        .clone()
        .ok_or_else(|| Error::Contract("simulated runs need ground-truth labels".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7465_7374);
    let n_test = ((TEST_FRACTION * base.n() as f64).floor() as usize).min(base.unlabeled_idx.len());
    let picks = sample(&mut rng, base.unlabeled_idx.len(), n_test);
    let mut test_rows: Vec<usize> = picks.into_iter().map(|k| base.unlabeled_idx[k]).collect();
    test_rows.sort_unstable();
    let pool_rows: Vec<usize> = (0..base.n()).filter(|i| !test_rows.contains(i)).collect();
    let test_x = base.features.select_rows(&test_rows);
    let test_y: Vec<i8> = test_rows.iter().map(|&i| truth[i]).collect();
    let test = Dataset::labeled(test_x, &test_y)?;
    let pool = base.subset(&pool_rows)?;
    let (pool, noisy) = inject_noise(&pool, &cfg.noise, seed)?;
    let gram = GramPair::default_for(&pool.features)?;
    Ok(Prepared { pool, test, noisy, gram })
}

fn detection(flagged: &[usize], noisy: &[usize], n_o: usize) -> (Option<f64>, Option<f64>) {
    if n_o == 0 {
        return (None, None);
    }
    let hits = flagged.iter().filter(|i| noisy.contains(i)).count() as f64;
    let precision = (!flagged.is_empty()).then(|| hits / flagged.len() as f64);
    let recall = (!noisy.is_empty()).then(|| hits / noisy.len() as f64);
    (precision, recall)
}

/// Metrics of a run, and the error that stopped it early, if any.
#[derive(Debug)]
pub struct RunOutput {
    pub metrics: Vec<RoundMetrics>,
    pub model: Option<RalModel>,
    pub error: Option<Error>,
}

impl RunOutput {
    /// Turns an early stop into an error, dropping the partial metrics.
    pub fn into_result(self) -> Result<(Vec<RoundMetrics>, Option<RalModel>)> {
        match self.error {
            Some(e) => Err(e),
            None => Ok((self.metrics, self.model)),
        }
    }
}

/// One query-loop round driver shared by the RAL strategies and the
/// service.
#[derive(Debug, Clone)]
pub struct RalSession {
    pub pool: Dataset,
    pub gram: GramPair,
    pub ral: RalConfig,
    pub solver: SolverConfig,
    warm: Option<(WarmStartState, Vec<LabelAdded>)>,
}

/// Result of solving the current round.
#[derive(Debug, Clone)]
pub struct RoundSolve {
    pub problem_n: usize,
    pub model: RalModel,
    pub query: Vec<usize>,
    pub iterations: usize,
    pub warm_started: bool,
    pub objective: f64,
    pub trace_tail: Vec<crate::solver::TraceRecord>,
    pub state: WarmStartState,
}

impl RalSession {
    pub fn new(pool: Dataset, gram: GramPair, ral: RalConfig, solver: SolverConfig) -> Self {
        RalSession { pool, gram, ral, solver, warm: None }
    }

    /// Assembles and solves the relaxed problem for the current labels,
    /// warm-started from the previous round when there is one.
    pub fn solve_round(&self, use_warm: bool) -> Result<RoundSolve> {
        let (problem, _) = assemble(&self.pool, &self.gram, &self.ral)?;
        let warm = match (&self.warm, use_warm) {
            (Some((state, changes)), true) => Some(carry_warm_start(state, changes, &problem)?),
            _ => None,
        };
        let out = solve(&problem, &self.solver, warm.as_ref())?;
        let sel = select_queries(&problem, &out.point.x);
        let tail = out.trace.len().saturating_sub(10);
        Ok(RoundSolve {
            problem_n: problem.n,
            model: RalModel::from_solution(&problem, &out.point),
            query: sel.indices,
            iterations: out.iterations,
            warm_started: warm.is_some(),
            objective: out.objective,
            trace_tail: out.trace[tail..].to_vec(),
            state: out.warm_state(&problem),
        })
    }

    /// Records labels for the round's queries and keeps its state for the
    /// next warm start.
    pub fn apply_labels(&mut self, round: &RoundSolve, labels: &[(usize, i8)]) -> Result<()> {
        let mut changes = Vec::with_capacity(labels.len());
        for &(i, y) in labels {
            self.pool.set_label(i, y)?;
            changes.push(LabelAdded { index: i, label: y });
        }
        self.warm = Some((round.state.clone(), changes));
        Ok(())
    }

    pub fn has_candidates(&self) -> bool {
        self.pool.candidate_idx.len() >= self.ral.b.max(1)
    }
}

fn oracle_labels(pool: &Dataset, query: &[usize]) -> Result<Vec<(usize, i8)>> {
    let truth = pool.ground_truth.as_ref().ok_or_else(|| Error::Contract("no ground truth for the oracle".into()))?;
    Ok(query.iter().map(|&i| (i, truth[i])).collect())
}

fn ral_loop(cfg: &ExperimentConfig, prep: Prepared, mode: Mode) -> RunOutput {
    let ral = RalConfig { mode, ..cfg.ral.clone() };
    let n_o = if mode == Mode::Lite { 0 } else { ral.n_o };
    let mut session = RalSession::new(prep.pool.clone(), prep.gram.clone(), ral, cfg.solver.clone());
    let mut metrics = Vec::new();
    let mut model = None;
    for round in 1..=cfg.rounds {
        if !session.has_candidates() {
            break;
        }
        let clock = Instant::now();
        let solved = match session.solve_round(true) {
            Ok(s) => s,
            Err(e) => return RunOutput { metrics, model, error: Some(e) },
        };
        let wall_ms = if cfg.solver.record_timing { clock.elapsed().as_millis() as u64 } else { 0 };
        let (precision, recall) = detection(&solved.model.suspected_noisy(), &prep.noisy, n_o);
        metrics.push(RoundMetrics {
            round,
            test_accuracy: accuracy(&Predictor::Ral(&solved.model), &prep.gram, &session.pool, &prep.test),
            queried: solved.query.clone(),
            noisy_detection_precision: precision,
            noisy_detection_recall: recall,
            solver_iters: solved.iterations,
            warm_started: solved.warm_started,
            wall_ms,
        });
        let labels = match oracle_labels(&session.pool, &solved.query) {
            Ok(l) => l,
            Err(e) => return RunOutput { metrics, model, error: Some(e) },
        };
        if let Err(e) = session.apply_labels(&solved, &labels) {
            return RunOutput { metrics, model, error: Some(e) };
        }
        model = Some(solved.model);
    }
    RunOutput { metrics, model, error: None }
}

/// The robust active-learning loop for one seed.
pub fn run_active_loop(cfg: &ExperimentConfig, seed: u64) -> RunOutput {
    match cfg.validate().and_then(|_| prepare(cfg, seed)) {
        Ok(prep) => ral_loop(cfg, prep, cfg.ral.mode),
        Err(e) => RunOutput { metrics: vec![], model: None, error: Some(e) },
    }
}

/// Plain SVM over the labeled pool points: coefficients and their rows.
fn labeled_svm(pool: &Dataset, gram: &GramPair, lambda: f64) -> Result<(DVector<f64>, Vec<usize>)> {
    let rows = pool.labeled_idx.clone();
    if rows.is_empty() {
        return Ok((DVector::zeros(0), rows));
    }
    let sub = pool.subset(&rows)?;
    let k = gram.k.select_rows(&rows).select_columns(&rows);
    let model: SCModel = fit_svm(&sub, &k, lambda)?;
    Ok((model.coefficients(), rows))
}

/// Candidates by ascending `|f|`, ties by index.
fn margin_order(pool: &Dataset, gram: &GramPair, coef: &DVector<f64>, rows: &[usize]) -> Vec<usize> {
    let mut scored: Vec<(usize, f64)> = pool
        .candidate_idx
        .iter()
        .map(|&c| (c, rows.iter().zip(coef.iter()).map(|(&i, &w)| w * gram.k[(i, c)]).sum::<f64>().abs()))
        .collect();
    scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    scored.into_iter().map(|(c, _)| c).collect()
}

fn svm_loop(cfg: &ExperimentConfig, prep: Prepared, strategy: Strategy, seed: u64) -> RunOutput {
    let mut pool = prep.pool.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7261_6e64);
    let b = cfg.ral.b.max(1);
    let mut metrics = Vec::new();
    for round in 1..=cfg.rounds {
        if pool.candidate_idx.len() < b {
            break;
        }
        let clock = Instant::now();
        let (coef, rows) = match labeled_svm(&pool, &prep.gram, cfg.ral.lambda) {
            Ok(m) => m,
            Err(e) => return RunOutput { metrics, model: None, error: Some(e) },
        };
        let query: Vec<usize> = match strategy {
            Strategy::Random => {
                let mut q: Vec<usize> =
                    sample(&mut rng, pool.candidate_idx.len(), b).into_iter().map(|k| pool.candidate_idx[k]).collect();
                q.sort_unstable();
                q
            }
            _ => margin_order(&pool, &prep.gram, &coef, &rows).into_iter().take(b).collect(),
        };
        let wall_ms = if cfg.solver.record_timing { clock.elapsed().as_millis() as u64 } else { 0 };
        metrics.push(RoundMetrics {
            round,
            test_accuracy: accuracy(&Predictor::Svm(coef, rows), &prep.gram, &pool, &prep.test),
            queried: query.clone(),
            noisy_detection_precision: None,
            noisy_detection_recall: None,
            solver_iters: 0,
            warm_started: false,
            wall_ms,
        });
        let labels = match oracle_labels(&pool, &query) {
            Ok(l) => l,
            Err(e) => return RunOutput { metrics, model: None, error: Some(e) },
        };
        for (i, y) in labels {
            if let Err(e) = pool.set_label(i, y) {
                return RunOutput { metrics, model: None, error: Some(e) };
            }
        }
    }
    RunOutput { metrics, model: None, error: None }
}

/// Runs `strategy` on the same pool, split and noise as the main loop.
pub fn run_baseline(cfg: &ExperimentConfig, strategy: Strategy, seed: u64) -> RunOutput {
    let prep = match cfg.validate().and_then(|_| prepare(cfg, seed)) {
        Ok(p) => p,
        Err(e) => return RunOutput { metrics: vec![], model: None, error: Some(e) },
    };
    match strategy {
        Strategy::Ral => ral_loop(cfg, prep, cfg.ral.mode),
        Strategy::RalLite => ral_loop(cfg, prep, Mode::Lite),
        Strategy::Random | Strategy::Margin => svm_loop(cfg, prep, strategy, seed),
    }
}

/// `(weighted, unweighted)` empirical hinge risk of `model` on `data`,
/// with weights `1 − y_i f_o(x_i)`.
pub fn weighted_risk(model: &SCModel, data: &Dataset, gram: &GramPair) -> Result<(f64, f64)> {
    let n = data.n();
    if n == 0 || gram.n() != n || model.alpha.len() != n {
        return Err(Error::Contract("model, data and gram sizes differ".into()));
    }
    if !data.unlabeled_idx.is_empty() {
        return Err(Error::Contract("risk needs every instance labeled".into()));
    }
    let f = model.f_train(&gram.k);
    let fo = model.fo_train(&gram.k_o);
    let mut weighted = 0.0;
    let mut plain = 0.0;
    for i in 0..n {
        let y = data.y(i);
        let loss = hinge(y * f[i]);
        weighted += (1.0 - y * fo[i]) * loss;
        plain += loss;
    }
    Ok((weighted / n as f64, plain / n as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

pub const CSV_HEADER: [&str; 8] = ["round", "accuracy", "query", "precision", "recall", "iters", "warm", "wall_ms"];

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Writes one row per round.
pub fn export_results(metrics: &[RoundMetrics], path: &Path, format: Format) -> Result<()> {
    match format {
        Format::Json => {
            std::fs::write(path, serde_json::to_string_pretty(metrics)? + "\n")?;
        }
        Format::Csv => {
            let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
            w.write_record(CSV_HEADER).map_err(csv_err)?;
            for m in metrics {
                let query: Vec<String> = m.queried.iter().map(usize::to_string).collect();
                w.write_record([
                    m.round.to_string(),
                    m.test_accuracy.to_string(),
                    query.join(";"),
                    opt(m.noisy_detection_precision),
                    opt(m.noisy_detection_recall),
                    m.solver_iters.to_string(),
                    m.warm_started.to_string(),
                    m.wall_ms.to_string(),
                ])
                .map_err(csv_err)?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse { line: 0, message: format!("{other:?}") },
    }
}

/// Reads metrics written by [`export_results`].
pub fn read_results(path: &Path, format: Format) -> Result<Vec<RoundMetrics>> {
    match format {
        Format::Json => Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?),
        Format::Csv => {
            let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
            let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
            if header != CSV_HEADER {
                return Err(Error::Schema { line: 1, message: format!("unexpected header {header:?}") });
            }
            let mut out = Vec::new();
            for (k, rec) in r.records().enumerate() {
                let rec = rec.map_err(csv_err)?;
                let line = k + 2;
                let bad = |what: &str| Error::Parse { line, message: format!("bad {what}") };
                let num = |i: usize, what: &str| rec[i].parse::<f64>().map_err(|_| bad(what));
                let opt_num = |i: usize, what: &str| -> Result<Option<f64>> {
                    if rec[i].is_empty() {
                        Ok(None)
                    } else {
                        num(i, what).map(Some)
                    }
                };
                let queried = if rec[2].is_empty() {
                    vec![]
                } else {
                    rec[2].split(';').map(|s| s.parse().map_err(|_| bad("query"))).collect::<Result<_>>()?
                };
                out.push(RoundMetrics {
                    round: rec[0].parse().map_err(|_| bad("round"))?,
                    test_accuracy: num(1, "accuracy")?,
                    queried,
                    noisy_detection_precision: opt_num(3, "precision")?,
                    noisy_detection_recall: opt_num(4, "recall")?,
                    solver_iters: rec[5].parse().map_err(|_| bad("iters"))?,
                    warm_started: rec[6].parse().map_err(|_| bad("warm"))?,
                    wall_ms: rec[7].parse().map_err(|_| bad("wall_ms"))?,
                });
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simple_complex::solve_sc_exact;

    fn synthetic(n: usize, labeled: usize) -> ExperimentConfig {
        ExperimentConfig {
            dataset: DatasetSource::Synthetic(SyntheticSpec { n, dim: 2, separation: 3.0, margin: 0.0, labeled }),
            noise: NoiseSpec::default(),
            rounds: 2,
            ral: RalConfig::default(),
            solver: SolverConfig { tol_fixed_point: 1e-5, ..SolverConfig::default() },
            seeds: vec![1],
            baselines: vec![],
        }
    }

    fn base(n: usize, seed: u64) -> Dataset {
        two_gaussians(&SyntheticSpec { n, dim: 2, separation: 3.0, margin: 0.0, labeled: 4 }, seed).unwrap()
    }

    #[test]
    fn no_noise_is_identity() {
        let d = base(10, 1);
        let (out, injected) = inject_noise(&d, &NoiseSpec::default(), 3).unwrap();
        assert_eq!(out, d);
        assert!(injected.is_empty());
    }

    #[test]
    fn flips_are_seeded() {
        let d = base(20, 2);
        let spec = NoiseSpec { flip_rate: 0.1, ..NoiseSpec::default() };
        let (a, ia) = inject_noise(&d, &spec, 5).unwrap();
        let (b, ib) = inject_noise(&d, &spec, 5).unwrap();
        assert_eq!(ia.len(), 2);
        assert_eq!(ia, ib);
        assert_eq!(a, b);
        let t0 = d.ground_truth.as_ref().unwrap();
        let t1 = a.ground_truth.as_ref().unwrap();
        for i in 0..20 {
            assert_eq!(t0[i] != t1[i], ia.contains(&i));
        }
    }

    #[test]
    fn outliers_are_far() {
        let d = base(12, 3);
        let spec = NoiseSpec { outlier_count: 3, outlier_scale: 10.0, ..NoiseSpec::default() };
        let (out, injected) = inject_noise(&d, &spec, 1).unwrap();
        assert_eq!(injected, vec![12, 13, 14]);
        let dim = d.dim();
        let centroid: Vec<f64> = (0..dim).map(|j| d.features.column(j).mean()).collect();
        let dist = |r: Vec<f64>| r.iter().zip(&centroid).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let radius = (0..12).map(|i| dist(d.row(i))).fold(0.0, f64::max);
        for i in injected {
            assert!(dist(out.row(i)) >= 5.0 * radius);
            assert!(out.candidate_idx.contains(&i));
        }
    }

    #[test]
    fn single_candidate_is_queried() {
        let mut cfg = synthetic(6, 0);
        cfg.rounds = 1;
        // 6 points, 30% test → 1 test point; label all pool points but one.
        let prep = prepare(&cfg, 1).unwrap();
        let mut pool = prep.pool.clone();
        let truth = pool.ground_truth.clone().unwrap();
        let last = *pool.candidate_idx.last().unwrap();
        for i in pool.candidate_idx.clone() {
            if i != last {
                pool.set_label(i, truth[i]).unwrap();
            }
        }
        let session = RalSession::new(pool, prep.gram.clone(), RalConfig::default(), cfg.solver.clone());
        let s = session.solve_round(true).unwrap();
        assert_eq!(s.query, vec![last]);
    }

    #[test]
    fn desk_instance_query_matches_enumeration() {
        use crate::oracle::{ral_exact, EnumerationBudget, Ordering};
        let spec = SyntheticSpec { n: 6, dim: 2, separation: 3.0, margin: 0.0, labeled: 3 };
        let pool = two_gaussians(&spec, 2).unwrap();
        let gram = GramPair::default_for(&pool.features).unwrap();
        let ral = RalConfig::default();
        let exact = ral_exact(&pool, &gram, &ral, &EnumerationBudget::default(), Ordering::default()).unwrap();
        let session = RalSession::new(pool, gram, ral, SolverConfig::default());
        assert_eq!(session.solve_round(false).unwrap().query, exact.query);
    }

    #[test]
    fn loop_is_deterministic_and_warm() {
        let cfg = synthetic(8, 3);
        let a = run_active_loop(&cfg, 4).into_result().unwrap().0;
        let b = run_active_loop(&cfg, 4).into_result().unwrap().0;
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
        assert!(!a[0].warm_started && a[1].warm_started);
        assert!(a.iter().all(|m| (0.0..=1.0).contains(&m.test_accuracy)));
    }

    #[test]
    fn random_baseline_is_reproducible() {
        let mut cfg = synthetic(12, 2);
        cfg.rounds = 3;
        let a = run_baseline(&cfg, Strategy::Random, 9).into_result().unwrap().0;
        let b = run_baseline(&cfg, Strategy::Random, 9).into_result().unwrap().0;
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
    }

    #[test]
    fn margin_picks_the_middle() {
        let x = DMatrix::from_row_slice(4, 1, &[-2.0, -0.2, 0.9, 2.0]);
        let d = Dataset::new(x, vec![Some(-1), None, None, Some(1)], Some(vec![-1, -1, 1, 1])).unwrap();
        let g = GramPair::default_for(&d.features).unwrap();
        let (coef, rows) = labeled_svm(&d, &g, 1.0).unwrap();
        assert_eq!(margin_order(&d, &g, &coef, &rows)[0], 1);
    }

    #[test]
    fn lite_matches_full_without_noise_budget() {
        let mut cfg = synthetic(8, 3);
        cfg.ral.n_o = 0;
        let full = run_active_loop(&cfg, 2).into_result().unwrap().0;
        let lite = run_baseline(&cfg, Strategy::RalLite, 2).into_result().unwrap().0;
        for (a, b) in full.iter().zip(&lite) {
            assert_eq!(a.queried, b.queried);
            assert!((a.test_accuracy - b.test_accuracy).abs() <= 1e-6);
        }
    }

    #[test]
    fn risk_edges() {
        let spec = SyntheticSpec { n: 6, dim: 2, separation: 3.0, margin: 0.0, labeled: 6 };
        let mut d = two_gaussians(&spec, 4).unwrap();
        d.labels[1] = d.labels[1].map(|y| -y);
        let g = GramPair::default_for(&d.features).unwrap();
        let plain = fit_svm(&d, &g.k, 1.0).unwrap();
        let (w, u) = weighted_risk(&plain, &d, &g).unwrap();
        assert_eq!(w, u);

        // p = 1 on the removed point, f_o matching its label there.
        let (mut model, _, removed) = solve_sc_exact(&d, &g, 1.0, 1.0, 1).unwrap();
        assert_eq!(removed.len(), 1);
        let r = removed[0];
        let mut t = DVector::zeros(6);
        t[r] = d.y(r);
        model.beta = g.k_o.clone().cholesky().unwrap().solve(&t);
        let (w, _) = weighted_risk(&model, &d, &g).unwrap();
        let f = model.f_train(&g.k);
        let clean: f64 = (0..6).filter(|&i| i != r).map(|i| hinge(d.y(i) * f[i])).sum::<f64>() / 6.0;
        assert!((w - clean).abs() < 1e-9);

        // Every point flagged: all weights vanish.
        let y = DVector::from_fn(6, |i, _| d.y(i));
        model.beta = g.k_o.clone().cholesky().unwrap().solve(&y);
        assert!(weighted_risk(&model, &d, &g).unwrap().0.abs() < 1e-9);
    }

    #[test]
    fn export_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let metrics = vec![
            RoundMetrics {
                round: 1,
                test_accuracy: 0.75,
                queried: vec![3],
                noisy_detection_precision: Some(0.5),
                noisy_detection_recall: None,
                solver_iters: 12,
                warm_started: false,
                wall_ms: 0,
            },
            RoundMetrics {
                round: 2,
                test_accuracy: 1.0 / 3.0,
                queried: vec![1, 4],
                noisy_detection_precision: None,
                noisy_detection_recall: Some(1.0),
                solver_iters: 5,
                warm_started: true,
                wall_ms: 7,
            },
        ];
        let csv_path = dir.path().join("m.csv");
        let json_path = dir.path().join("m.json");
        export_results(&metrics, &csv_path, Format::Csv).unwrap();
        export_results(&metrics, &json_path, Format::Json).unwrap();
        assert_eq!(read_results(&csv_path, Format::Csv).unwrap(), metrics);
        assert_eq!(read_results(&json_path, Format::Json).unwrap(), metrics);

        export_results(&[], &csv_path, Format::Csv).unwrap();
        assert_eq!(std::fs::read_to_string(&csv_path).unwrap().trim(), CSV_HEADER.join(","));
        assert!(export_results(&metrics, &dir.path().join("missing/m.csv"), Format::Csv).is_err());
    }

    #[test]
    fn config_rejects_bad_values() {
        let mut cfg = synthetic(8, 3);
        cfg.noise.flip_rate = 1.5;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = synthetic(8, 3);
        cfg.rounds = 0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let json = r#"{"dataset": {"synthetic": {"n": 10, "labeled": 3}}, "rounds": 2, "baselines": ["random", "ral-lite"]}"#;
        let cfg = ExperimentConfig::from_json(json).unwrap();
        assert_eq!(cfg.baselines, vec![Strategy::Random, Strategy::RalLite]);
        assert!(ExperimentConfig::from_json(r#"{"dataset": {"file": "x.csv"}, "rounds": 1, "extra": 1}"#).is_err());
    }

    proptest::proptest! {
        #[test]
        fn noise_flips_exactly_the_reported_points(
            n in 4usize..20,
            rate in 0.0f64..0.5,
            outliers in 0usize..3,
            seed in 0u64..1000,
        ) {
            let spec = SyntheticSpec { n, dim: 2, separation: 3.0, margin: 0.0, labeled: 2 };
            let base = two_gaussians(&spec, seed).unwrap();
            let noise = NoiseSpec { flip_rate: rate, outlier_count: outliers, ..NoiseSpec::default() };
            let (noisy, injected) = inject_noise(&base, &noise, seed).unwrap();
            proptest::prop_assert_eq!(noisy.n(), n + outliers);
            proptest::prop_assert_eq!(injected.len(), (rate * n as f64 + 1e-9).floor() as usize + outliers);
            let before = base.ground_truth.as_ref().unwrap();
            let after = noisy.ground_truth.as_ref().unwrap();
            for i in 0..n {
                let flipped = injected.contains(&i);
                proptest::prop_assert_eq!(after[i] == -before[i], flipped);
                proptest::prop_assert_eq!(noisy.labels[i].is_some(), base.labels[i].is_some());
            }
            for i in n..n + outliers {
                proptest::prop_assert!(noisy.labels[i].is_none() && noisy.candidate_idx.contains(&i));
            }
        }

        #[test]
        fn csv_export_round_trips(
            rows in proptest::collection::vec(
                (0.0f64..=1.0, proptest::collection::vec(0usize..100, 0..3), proptest::option::of(0.0f64..=1.0), 0usize..10_000, proptest::bool::ANY),
                0..6,
            ),
        ) {
            let metrics: Vec<RoundMetrics> = rows
                .into_iter()
                .enumerate()
                .map(|(k, (acc, queried, precision, iters, warm))| RoundMetrics {
                    round: k + 1,
                    test_accuracy: acc,
                    queried,
                    noisy_detection_precision: precision,
                    noisy_detection_recall: precision.map(|p| 1.0 - p),
                    solver_iters: iters,
                    warm_started: warm,
                    wall_ms: 0,
                })
                .collect();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("m.csv");
            export_results(&metrics, &path, Format::Csv).unwrap();
            proptest::prop_assert_eq!(read_results(&path, Format::Csv).unwrap(), metrics);
        }
    }
}
