use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

use ral_core::data::{two_gaussians, write_dataset, SyntheticSpec};
use ral_core::harness::{read_results, Format};

fn ral(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ral")).args(args).current_dir(dir).output().unwrap()
}

fn json_of(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn write_pool(dir: &Path, n: usize, labeled: usize) {
    let spec = SyntheticSpec { n, dim: 2, separation: 3.0, margin: 0.0, labeled };
    write_dataset(&two_gaussians(&spec, 4).unwrap(), &dir.join("pool.csv")).unwrap();
}

#[test]
fn fit_reports_labeled_rows() {
    let dir = tempfile::tempdir().unwrap();
    write_pool(dir.path(), 8, 5);
    let relaxed = json_of(&ral(&["fit", "pool.csv"], dir.path()));
    let exact = json_of(&ral(&["fit", "pool.csv", "--exact"], dir.path()));
    assert_eq!(relaxed["rows"].as_array().unwrap().len(), 5);
    assert_eq!(relaxed["rows"], exact["rows"]);
    // The relaxation never exceeds the enumerated optimum.
    assert!(relaxed["objective"].as_f64().unwrap() <= exact["objective"].as_f64().unwrap() + 1e-4);
}

#[test]
fn score_complexity_writes_file() {
    let dir = tempfile::tempdir().unwrap();
    write_pool(dir.path(), 6, 6);
    let out = ral(&["score-complexity", "pool.csv", "--probes", "4", "--out", "scores.json"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("scores.json")).unwrap();
    let report: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(report["scores"].as_array().unwrap().len(), 6);
    assert_eq!(report["probes"], 4);
}

#[test]
fn oracle_orderings() {
    let dir = tempfile::tempdir().unwrap();
    write_pool(dir.path(), 5, 3);
    for ordering in ["worst-query-label", "exchanged"] {
        let v = json_of(&ral(&["oracle", "pool.csv", "--ordering", ordering], dir.path()));
        assert_eq!(v["query"].as_array().unwrap().len(), 1);
        assert_eq!(v["per_query"].as_array().unwrap().len(), 2);
    }
}

#[test]
fn missing_file_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = ral(&["fit", "nope.csv"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn active_run_writes_every_strategy_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let config = serde_json::json!({
        "dataset": {"synthetic": {"n": 10, "labeled": 3}},
        "rounds": 2,
        "seeds": [1, 2],
        "baselines": ["random", "margin"],
    });
    std::fs::write(dir.path().join("cfg.json"), config.to_string()).unwrap();
    let summary = json_of(&ral(&["active-run", "--config", "cfg.json", "--out", "res.json", "--format", "json"], dir.path()));
    assert_eq!(summary.as_array().unwrap().len(), 6);
    let expected = [
        "res.json",
        "res.ral.seed2.json",
        "res.random.seed1.json",
        "res.random.seed2.json",
        "res.margin.seed1.json",
        "res.margin.seed2.json",
    ];
    for name in expected {
        let rows = read_results(&dir.path().join(name), Format::Json).unwrap();
        assert_eq!(rows.len(), 2, "{name}");
        assert_eq!(rows[1].round, 2);
    }
}
