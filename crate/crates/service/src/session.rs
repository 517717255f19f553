//! Session state machine and its event-sourced persistence.
//!
//! A session directory holds `session.json` (the creation request) and
//! `events.ndjson` (one [`LabelEvent`] per line). Replaying the events
//! against the creation request rebuilds the live state exactly, because
//! every round solve is a deterministic function of the labels so far.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use ral_core::data::{Dataset, SyntheticSpec};
use ral_core::harness::{prepare, DatasetSource, ExperimentConfig, NoiseSpec, RalModel, RalSession, RoundSolve};
use ral_core::kernel::GramPair;
use ral_core::ral::RalConfig;
use ral_core::solver::{SolverConfig, TraceRecord};
use ral_core::Error;

pub const REQUEST_FILE: &str = "session.json";
pub const EVENTS_FILE: &str = "events.ndjson";

/// Features with optional labels, posted directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineData {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<Option<i8>>,
    #[serde(default)]
    pub ground_truth: Option<Vec<i8>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionData {
    File(PathBuf),
    Synthetic(SyntheticSpec),
    Inline(InlineData),
}

/// Body of `POST /sessions`. File and synthetic sources go through the
/// same preparation as a simulated run with `seed`, so the pool matches
/// that run exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub dataset: SessionData,
    #[serde(default)]
    pub noise: NoiseSpec,
    pub rounds: usize,
    #[serde(default)]
    pub ral: RalConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub seed: u64,
}

impl CreateSession {
    /// The equivalent simulated experiment, when the source allows one.
    pub fn experiment(&self) -> Option<ExperimentConfig> {
        let dataset = match &self.dataset {
            SessionData::File(p) => DatasetSource::File(p.clone()),
            SessionData::Synthetic(s) => DatasetSource::Synthetic(s.clone()),
            SessionData::Inline(_) => return None,
        };
        Some(ExperimentConfig {
            dataset,
            noise: self.noise,
            rounds: self.rounds,
            ral: self.ral.clone(),
            solver: self.solver.clone(),
            seeds: vec![self.seed],
            baselines: vec![],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelEvent {
    pub timestamp_ms: u64,
    pub index: usize,
    pub label: i8,
    pub round: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Solving,
    Ready,
    Finished,
    Failed,
}

#[derive(Debug)]
pub enum SessionError {
    /// Request or dataset rejected.
    Invalid(String),
    /// Label for an index other than the pending query.
    Conflict { expected: usize, got: usize },
    /// Label submitted with no query pending.
    NoPending,
    Failed(String),
    Io(std::io::Error),
}

impl From<Error> for SessionError {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(io) => SessionError::Io(io),
            Error::Config(m) | Error::Contract(m) => SessionError::Invalid(m),
            e @ (Error::Parse { .. } | Error::Schema { .. } | Error::Json(_)) => SessionError::Invalid(e.to_string()),
            other => SessionError::Failed(other.to_string()),
        }
    }
}

impl From<std::io::Error> for SessionError {
    fn from(e: std::io::Error) -> Self {
        SessionError::Io(e)
    }
}

impl std::fmt::Display for SessionError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SessionError::Invalid(m) | SessionError::Failed(m) => f.write_str(m),
            SessionError::Conflict { expected, got } => {
                write!(f, "instance {got} is not the pending query (expected {expected})")
            }
            SessionError::NoPending => f.write_str("no query is pending"),
            SessionError::Io(e) => write!(f, "{e}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum QueryResponse {
    Query {
        round: usize,
        index: usize,
        features: Vec<f64>,
        f: f64,
        f_o: f64,
        suspected_noisy: Vec<usize>,
    },
    Finished {
        round: usize,
        labels: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelAck {
    pub round: usize,
    pub labels: usize,
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub id: String,
    pub round: usize,
    pub status: Status,
    pub labels: usize,
    /// Round of the latest completed solve; `None` before the first.
    pub model_round: Option<usize>,
    pub f: Option<Vec<f64>>,
    pub f_o: Option<Vec<f64>>,
    pub p: Option<Vec<f64>>,
    pub q: Option<Vec<f64>>,
    pub suspected_noisy: Vec<usize>,
    /// On the held-out split, or on the pool when only ground truth is known.
    pub accuracy: Option<f64>,
    pub trace_tail: Vec<TraceRecord>,
    pub error: Option<String>,
}

pub struct SessionCore {
    pub id: String,
    pub request: CreateSession,
    session: RalSession,
    test: Option<Dataset>,
    round: usize,
    events: Vec<LabelEvent>,
    /// Solve of the current round.
    current: Option<RoundSolve>,
    /// Latest completed solve, possibly of an earlier round.
    latest: Option<(usize, RoundSolve)>,
    answered: Vec<(usize, i8)>,
    delivered: bool,
    failure: Option<String>,
    dir: PathBuf,
}

fn inline_dataset(d: &InlineData) -> Result<Dataset, SessionError> {
    let n = d.features.len();
    let dim = d.features.first().map_or(0, Vec::len);
    if n == 0 || dim == 0 || d.features.iter().any(|r| r.len() != dim) {
        return Err(SessionError::Invalid("features must be a non-empty rectangular array".into()));
    }
    let x = DMatrix::from_fn(n, dim, |i, j| d.features[i][j]);
    Ok(Dataset::new(x, d.labels.clone(), d.ground_truth.clone())?)
}

impl SessionCore {
    /// Validates the request and builds round 1, unsolved.
    pub fn create(id: String, request: CreateSession, dir: PathBuf) -> Result<Self, SessionError> {
        if request.rounds == 0 {
            return Err(SessionError::Invalid("rounds must be at least 1".into()));
        }
        request.solver.validate()?;
        let (pool, test, gram) = match (&request.dataset, request.experiment()) {
            (_, Some(cfg)) => {
                cfg.validate()?;
                let prep = prepare(&cfg, request.seed)?;
                (prep.pool, Some(prep.test), prep.gram)
            }
            (SessionData::Inline(d), None) => {
                let pool = inline_dataset(d)?;
                let gram = GramPair::default_for(&pool.features)?;
                (pool, None, gram)
            }
            _ => unreachable!("only inline data lacks an experiment"),
        };
        request.ral.validate(pool.n(), pool.candidate_idx.len())?;
        let session = RalSession::new(pool, gram, request.ral.clone(), request.solver.clone());
        Ok(SessionCore {
            id,
            request,
            session,
            test,
            round: 1,
            events: Vec::new(),
            current: None,
            latest: None,
            answered: Vec::new(),
            delivered: false,
            failure: None,
            dir,
        })
    }

    /// Writes the creation request; the session directory must not exist.
    pub fn persist_new(&self) -> Result<(), SessionError> {
        fs::create_dir_all(self.dir.parent().unwrap_or(Path::new(".")))?;
        fs::create_dir(&self.dir)?;
        let body = serde_json::to_string_pretty(&self.request).map_err(|e| SessionError::Failed(e.to_string()))?;
        fs::write(self.dir.join(REQUEST_FILE), body + "\n")?;
        File::create(self.dir.join(EVENTS_FILE))?;
        Ok(())
    }

    /// Rebuilds a session from its directory, solving every recorded round.
    pub fn replay(id: String, dir: PathBuf) -> Result<Self, SessionError> {
        let text = fs::read_to_string(dir.join(REQUEST_FILE))?;
        let request: CreateSession =
            serde_json::from_str(&text).map_err(|e| SessionError::Invalid(format!("{REQUEST_FILE}: {e}")))?;
        let mut core = SessionCore::create(id, request, dir.clone())?;
        let events = BufReader::new(File::open(dir.join(EVENTS_FILE))?);
        for (k, line) in events.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let event: LabelEvent = serde_json::from_str(&line)
                .map_err(|e| SessionError::Invalid(format!("{EVENTS_FILE} line {}: {e}", k + 1)))?;
            if event.round != core.round {
                return Err(SessionError::Invalid(format!(
                    "{EVENTS_FILE} line {}: event for round {} during round {}",
                    k + 1,
                    event.round,
                    core.round
                )));
            }
            if core.current.is_none() {
                let solved = core.snapshot().solve_round(true);
                core.install(core.round, solved);
            }
            core.next_query()?;
            core.apply(event)?;
        }
        Ok(core)
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn events(&self) -> &[LabelEvent] {
        &self.events
    }

    pub fn is_finished(&self) -> bool {
        self.round > self.request.rounds || !self.session.has_candidates()
    }

    pub fn status(&self) -> Status {
        if self.failure.is_some() {
            Status::Failed
        } else if self.is_finished() {
            Status::Finished
        } else if self.current.is_some() {
            Status::Ready
        } else {
            Status::Solving
        }
    }

    /// Whether the current round still needs a solve.
    pub fn needs_solve(&self) -> bool {
        self.status() == Status::Solving
    }

    /// Copy of the round driver, for solving without holding the session.
    pub fn snapshot(&self) -> RalSession {
        self.session.clone()
    }

    /// Stores a solve for `round`; stale results are dropped.
    pub fn install(&mut self, round: usize, solved: ral_core::Result<RoundSolve>) {
        if round != self.round || self.current.is_some() {
            return;
        }
        match solved {
            Ok(s) => {
                self.latest = Some((round, s.clone()));
                self.current = Some(s);
            }
            Err(e) => self.failure = Some(e.to_string()),
        }
    }

    fn pending_index(&self) -> Option<usize> {
        self.current.as_ref().and_then(|s| s.query.get(self.answered.len()).copied())
    }

    /// The pending query, marking it delivered. Repeated calls return the
    /// same response until a label arrives.
    pub fn next_query(&mut self) -> Result<QueryResponse, SessionError> {
        if let Some(msg) = &self.failure {
            return Err(SessionError::Failed(msg.clone()));
        }
        if self.is_finished() {
            return Ok(QueryResponse::Finished { round: self.round, labels: self.events.len() });
        }
        let solved = self.current.as_ref().ok_or(SessionError::NoPending)?;
        let index = self.pending_index().ok_or(SessionError::NoPending)?;
        let (f, f_o) = solved.model.train_values(&self.session.gram);
        self.delivered = true;
        Ok(QueryResponse::Query {
            round: self.round,
            index,
            features: self.session.pool.row(index),
            f: f[index],
            f_o: f_o[index],
            suspected_noisy: solved.model.suspected_noisy(),
        })
    }

    /// Checks a label against the pending query.
    pub fn check_label(&self, index: usize, label: i8) -> Result<(), SessionError> {
        if label != 1 && label != -1 {
            return Err(SessionError::Invalid(format!("label must be -1 or 1, got {label}")));
        }
        let expected = match self.pending_index() {
            Some(i) if self.delivered => i,
            _ => return Err(SessionError::NoPending),
        };
        if expected != index {
            return Err(SessionError::Conflict { expected, got: index });
        }
        Ok(())
    }

    /// Appends the event to the log, then applies it. Returns whether a
    /// new round solve is needed.
    pub fn submit(&mut self, index: usize, label: i8, timestamp_ms: u64) -> Result<bool, SessionError> {
        self.check_label(index, label)?;
        let event = LabelEvent { timestamp_ms, index, label, round: self.round };
        let mut line = serde_json::to_string(&event).map_err(|e| SessionError::Failed(e.to_string()))?;
        line.push('\n');
        let mut log = OpenOptions::new().append(true).open(self.dir.join(EVENTS_FILE))?;
        log.write_all(line.as_bytes())?;
        log.sync_data()?;
        self.apply(event)?;
        Ok(self.needs_solve())
    }

    fn apply(&mut self, event: LabelEvent) -> Result<(), SessionError> {
        self.check_label(event.index, event.label)?;
        self.events.push(event);
        self.answered.push((event.index, event.label));
        self.delivered = false;
        let solved = self.current.as_ref().expect("checked pending query");
        if self.answered.len() == solved.query.len() {
            let solved = self.current.take().expect("checked pending query");
            self.session.apply_labels(&solved, &self.answered)?;
            self.answered.clear();
            self.round += 1;
        }
        Ok(())
    }

    pub fn model_state(&self) -> ModelState {
        let mut state = ModelState {
            id: self.id.clone(),
            round: self.round,
            status: self.status(),
            labels: self.events.len(),
            model_round: None,
            f: None,
            f_o: None,
            p: None,
            q: None,
            suspected_noisy: vec![],
            accuracy: None,
            trace_tail: vec![],
            error: self.failure.clone(),
        };
        if let Some((round, solved)) = &self.latest {
            let model: &RalModel = &solved.model;
            let gram = &self.session.gram;
            let (f, f_o) = model.train_values(gram);
            state.accuracy = match (&self.test, &self.session.pool.ground_truth) {
                (Some(test), _) if test.n() > 0 => Some(model.accuracy(gram, &self.session.pool, test)),
                (_, Some(truth)) => Some(
                    truth.iter().zip(f.iter()).filter(|(&t, &v)| (v >= 0.0) == (t > 0)).count() as f64
                        / truth.len() as f64,
                ),
                _ => None,
            };
            state.model_round = Some(*round);
            state.f = Some(f.iter().copied().collect());
            state.f_o = Some(f_o.iter().copied().collect());
            state.p = Some(model.p.iter().copied().collect());
            state.q = Some(model.q.iter().copied().collect());
            state.suspected_noisy = model.suspected_noisy();
            state.trace_tail = solved.trace_tail.clone();
        }
        state
    }

    /// Final model after the labels so far, if any round was solved.
    pub fn latest_model(&self) -> Option<&RalModel> {
        self.latest.as_ref().map(|(_, s)| &s.model)
    }
}
