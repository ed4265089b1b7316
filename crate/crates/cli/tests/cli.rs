use std::path::PathBuf;
use std::process::Command;

use stochopf::moments::Balancing;
use stochopf_cli::fit::fit_forecasts;
use stochopf_cli::manifest::{ForecastChoice, RunManifest, SweepAxes};
use stochopf_cli::run::{read_schedule, run_scenario};
use stochopf_cli::sweep::run_sweep;
use stochopf_cli::RunError;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

fn case5(out: &std::path::Path) -> RunManifest {
    let mut m = RunManifest::new(fixture("case5.json"), out);
    m.forecast = ForecastChoice::Artificial;
    m.samples = 2000;
    m
}

#[test]
fn missing_case_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let m = RunManifest::new("/no/such/case.json", dir.path());
    let err = run_scenario(&m).unwrap_err();
    assert!(matches!(err, RunError::MissingFile(_)));
    assert!(err.to_string().contains("/no/such/case.json"));
}

#[test]
fn run_writes_outputs_within_limits() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_scenario(&case5(dir.path())).unwrap();
    for f in ["schedule.csv", "costs.json", "validation.json"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let rows = read_schedule(&dir.path().join("schedule.csv")).unwrap();
    assert_eq!(rows.len(), out.moments.len());
    for r in &rows {
        let tol = 1e-6 * r.limit_hi.abs().max(r.limit_lo.abs()).max(1.0).min(1e6);
        assert!(r.band_lo >= r.limit_lo - tol && r.band_hi <= r.limit_hi + tol, "{r:?}");
    }
    let costs: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("costs.json")).unwrap()).unwrap();
    let total: f64 = costs["generator_costs"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
    assert!((total - out.costs.objective).abs() <= 1e-4 * out.costs.objective.abs());
}

#[test]
fn same_seed_reproduces_validation() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_scenario(&case5(a.path())).unwrap();
    run_scenario(&case5(b.path())).unwrap();
    let read = |d: &tempfile::TempDir| std::fs::read_to_string(d.path().join("validation.json")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn sweep_counts_follow_the_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = RunManifest::new(fixture("case5_wind.json"), dir.path());
    m.horizon = 6;
    m.jobs = 2;
    m.sweep = Some(SweepAxes {
        points: SweepAxes::parse_points("1:1,2:1,3:2").unwrap(),
        epsilons: vec![0.05],
        balancings: vec![Balancing::Local, Balancing::Global],
    });
    let rows = run_sweep(&m).unwrap();
    assert_eq!(rows.len(), 6);
    for r in &rows {
        assert_eq!(r.policy_variables, r.expected_variables, "{r:?}");
        assert_eq!(r.status, "optimal");
    }
    let text = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(text.lines().count(), 7);
}

#[test]
fn empty_sweep_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = RunManifest::new(fixture("case5.json"), dir.path());
    m.sweep = Some(SweepAxes { points: vec![], epsilons: vec![0.05], balancings: vec![Balancing::Local] });
    assert!(matches!(run_sweep(&m), Err(RunError::Manifest(_))));
    assert!(SweepAxes::parse_points("1-1").is_err());
}

#[test]
fn fit_writes_forecast_json() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = RunManifest::new(fixture("case5_wind.json"), dir.path());
    m.horizon = 24;
    let fits = fit_forecasts(&m, &Default::default()).unwrap();
    assert_eq!(fits.len(), 1);
    assert!(fits[0].log_marginal_likelihood.is_finite());
    let text = std::fs::read_to_string(&fits[0].forecast_file).unwrap();
    let f = stochopf::forecast::Forecast::from_json(&text).unwrap();
    assert_eq!(f.horizon(), 24);
    assert!(dir.path().join("fit_summary.json").is_file());
}

#[test]
fn binary_exits_nonzero_on_infeasible_case() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_stochopf"))
        .args(["run", "--case"])
        .arg(fixture("case5_overload.json"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("DemandExceedsCapacity"), "{err}");
    assert!(dir.path().join("infeasibility.json").is_file());
}

#[test]
fn binary_honours_tolerance_env() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_stochopf"))
        .env("STOCHOPF_SOLVER_TOL", "nope")
        .args(["run", "--case"])
        .arg(fixture("case5.json"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("STOCHOPF_SOLVER_TOL"));
}
