use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use ral_core::complexity::{score_all, ComplexitySettings};
use ral_core::data::{load_dataset, Dataset};
use ral_core::harness::{export_results, run_active_loop, run_baseline, ExperimentConfig, Format, RunOutput, Strategy};
use ral_core::kernel::GramPair;
use ral_core::oracle::{ral_exact, EnumerationBudget, Ordering};
use ral_core::ral::RalConfig;
use ral_core::simple_complex::{solve_sc_exact, solve_sc_relaxation, SCModel, EXACT_MAX_N};
use ral_core::solver::SolverConfig;
use ral_core::{Error, Result};

#[derive(Parser)]
#[command(name = "ral", version, about = "Robust pool-based active learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutFormat {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum OrderingArg {
    WorstQueryLabel,
    Exchanged,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the Simple-Complex classifier on the labeled rows of a dataset.
    Fit {
        data: PathBuf,
        /// JSON with optional `ral` and `solver` objects.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Enumerate noisy subsets instead of solving the relaxation.
        #[arg(long)]
        exact: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Instance-complexity scores of every labeled instance.
    ScoreComplexity {
        data: PathBuf,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long, default_value_t = 16)]
        probes: usize,
        #[arg(long, default_value_t = 0.01)]
        lambda: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulated active-learning run over every configured seed and baseline.
    ActiveRun {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: OutFormat,
    },
    /// Exact minimax query by enumeration, for small pools.
    Oracle {
        data: PathBuf,
        /// JSON with an optional `ral` object.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "worst-query-label")]
        ordering: OrderingArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// HTTP labeling service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value = "ral-sessions")]
        data_dir: PathBuf,
    },
}

/// The `ral` and `solver` parts of an experiment config.
#[derive(Debug, Default, Deserialize)]
struct ModelConfig {
    #[serde(default)]
    ral: RalConfig,
    #[serde(default)]
    solver: SolverConfig,
}

fn read_model_config(path: Option<&Path>) -> Result<ModelConfig> {
    let Some(path) = path else { return Ok(ModelConfig::default()) };
    let value: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let pick = |key: &str| value.get(key).cloned().unwrap_or(serde_json::Value::Object(Default::default()));
    Ok(ModelConfig { ral: serde_json::from_value(pick("ral"))?, solver: serde_json::from_value(pick("solver"))? })
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn labeled_only(data: &Dataset) -> Result<Dataset> {
    if data.labeled_idx.is_empty() {
        return Err(Error::Contract("the dataset has no labeled rows".into()));
    }
    data.subset(&data.labeled_idx)
}

#[derive(Serialize)]
struct FitReport {
    /// Dataset rows used for training.
    rows: Vec<usize>,
    objective: f64,
    /// Training rows flagged noisy, as dataset indices.
    noisy: Vec<usize>,
    model: SCModel,
}

fn fit(data: &Path, config: Option<&Path>, exact: bool, out: Option<&Path>) -> Result<()> {
    let cfg = read_model_config(config)?;
    let full = load_dataset(data)?;
    let train = labeled_only(&full)?;
    let gram = GramPair::default_for(&train.features)?;
    let (lambda, lambda_o, n_o) = (cfg.ral.lambda, cfg.ral.lambda_o, cfg.ral.n_o);
    let (model, objective, noisy) = if exact {
        if train.n() > EXACT_MAX_N {
            return Err(Error::Config(format!("exact fit supports at most {EXACT_MAX_N} labeled rows")));
        }
        solve_sc_exact(&train, &gram, lambda, lambda_o, n_o)?
    } else {
        let (sol, model) = solve_sc_relaxation(&train, &gram, lambda, lambda_o, n_o, &cfg.solver)?;
        let noisy = (0..train.n()).filter(|&i| model.p[i] >= 0.5).collect();
        (model, sol.objective, noisy)
    };
    let noisy = noisy.into_iter().map(|i: usize| full.labeled_idx[i]).collect();
    emit(&FitReport { rows: full.labeled_idx.clone(), objective, noisy, model }, out)
}

fn score(data: &Path, settings: ComplexitySettings, out: Option<&Path>) -> Result<()> {
    let full = load_dataset(data)?;
    let train = labeled_only(&full)?;
    let gram = GramPair::default_for(&train.features)?;
    emit(&score_all(&train, &gram, &settings)?, out)
}

fn oracle(data: &Path, config: Option<&Path>, ordering: Ordering, out: Option<&Path>) -> Result<()> {
    let cfg = read_model_config(config)?;
    let pool = load_dataset(data)?;
    let gram = GramPair::default_for(&pool.features)?;
    emit(&ral_exact(&pool, &gram, &cfg.ral, &EnumerationBudget::default(), ordering)?, out)
}

/// Output path of one (strategy, seed) run. The main loop on the first
/// seed writes to `out` itself.
fn run_path(out: &Path, strategy: Strategy, seed: u64, first_seed: u64) -> PathBuf {
    if strategy == Strategy::Ral && seed == first_seed {
        return out.to_path_buf();
    }
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("results");
    let name = match out.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}.{}.seed{seed}.{ext}", strategy.name()),
        None => format!("{stem}.{}.seed{seed}", strategy.name()),
    };
    out.with_file_name(name)
}

fn active_run(config: &Path, out: &Path, format: Format) -> Result<bool> {
    let cfg = ExperimentConfig::from_json(&std::fs::read_to_string(config)?)?;
    let strategies: Vec<Strategy> = std::iter::once(Strategy::Ral).chain(cfg.baselines.iter().copied()).collect();
    let jobs: Vec<(Strategy, u64)> =
        strategies.iter().flat_map(|&s| cfg.seeds.iter().map(move |&seed| (s, seed))).collect();
    // Runs are independent; results are folded in job order.
    let outputs: Vec<RunOutput> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|&(strategy, seed)| {
                let cfg = &cfg;
                scope.spawn(move || match strategy {
                    Strategy::Ral => run_active_loop(cfg, seed),
                    other => run_baseline(cfg, other, seed),
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("run thread panicked")).collect()
    });
    let mut ok = true;
    let mut summary = Vec::new();
    for (&(strategy, seed), run) in jobs.iter().zip(&outputs) {
        let path = run_path(out, strategy, seed, cfg.seeds[0]);
        export_results(&run.metrics, &path, format)?;
        if let Some(e) = &run.error {
            eprintln!("{} seed {seed}: stopped after {} rounds: {e}", strategy.name(), run.metrics.len());
            ok = false;
        }
        let last = run.metrics.last().map(|m| m.test_accuracy);
        summary.push(serde_json::json!({
            "strategy": strategy.name(),
            "seed": seed,
            "rounds": run.metrics.len(),
            "final_accuracy": last,
            "path": path,
        }));
    }
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(ok)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Fit { data, config, exact, out } => fit(&data, config.as_deref(), exact, out.as_deref())?,
        Command::ScoreComplexity { data, epsilon, probes, lambda, seed, out } => {
            let settings = ComplexitySettings { epsilon, probes, lambda, seed, ..ComplexitySettings::default() };
            score(&data, settings, out.as_deref())?
        }
        Command::ActiveRun { config, out, format } => {
            let format = match format {
                OutFormat::Csv => Format::Csv,
                OutFormat::Json => Format::Json,
            };
            return active_run(&config, &out, format);
        }
        Command::Oracle { data, config, ordering, out } => {
            let ordering = match ordering {
                OrderingArg::WorstQueryLabel => Ordering::WorstQueryLabel,
                OrderingArg::Exchanged => Ordering::Exchanged,
            };
            oracle(&data, config.as_deref(), ordering, out.as_deref())?
        }
        Command::Serve { port, host, data_dir } => {
            let addr: SocketAddr = format!("{host}:{port}")
                .parse()
                .map_err(|e| Error::Config(format!("bad address {host}:{port}: {e}")))?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(ral_service::serve(addr, data_dir))?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
