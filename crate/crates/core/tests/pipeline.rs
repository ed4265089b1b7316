use std::path::PathBuf;

use approx::assert_relative_eq;
use stochopf::forecast::{reference_factor, ForecastSet};
use stochopf::moments::Balancing;
use stochopf::netcase::{load_case, GridCase};
use stochopf::socp::{build, Scenario, ScenarioConfig};
use stochopf::solve::{diagnose_infeasibility, extract_policies, solve, InfeasibilityFlag, SolveStatus, SolverOptions};
use stochopf::validate::validate_solution;

fn case(name: &str) -> GridCase {
    load_case(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)).unwrap()
}

fn solve_case(c: &GridCase, fc: &ForecastSet, cfg: &ScenarioConfig) -> (stochopf::socp::Problem, stochopf::solve::PolicySolution) {
    let problem = build(c, fc, cfg).unwrap();
    let raw = solve(&problem.program, &SolverOptions::default());
    let pol = extract_policies(&raw, &problem.layout);
    (problem, pol)
}

#[test]
fn case5_s2_day_ahead_is_optimal() {
    let c = case("case5.json");
    let fc = ForecastSet::artificial(&c, 24, 24.0, None).unwrap();
    let (_, pol) = solve_case(&c, &fc, &ScenarioConfig::new(Scenario::S2, 24));
    assert_eq!(pol.status, SolveStatus::Optimal);
    assert!(pol.objective.is_finite());
}

#[test]
fn case5_s1_policy_scalars() {
    let c = case("case5.json");
    let fc = ForecastSet::artificial(&c, 24, 24.0, None).unwrap();
    let problem = build(&c, &fc, &ScenarioConfig::new(Scenario::S1, 24)).unwrap();
    assert_eq!(problem.program.n_policy_vars(), 648);
}

#[test]
fn storage_lowers_cost_and_validates() {
    let c = case("case5.json");
    let fc = ForecastSet::artificial(&c, 12, 24.0, Some(&reference_factor())).unwrap();
    let (_, s1) = solve_case(&c, &fc, &ScenarioConfig::new(Scenario::S1, 12));
    let (problem, s2) = solve_case(&c, &fc, &ScenarioConfig::new(Scenario::S2, 12));
    assert_eq!(s1.status, SolveStatus::Optimal);
    assert_eq!(s2.status, SolveStatus::Optimal);
    assert!(s2.objective <= s1.objective * (1.0 + 1e-6));
    assert!(s2.balance_residual <= 1e-9);

    let report = validate_solution(&s2, &problem.layout, &c, &problem.program.chance, 10_000, 11);
    assert!(report.constraints.iter().all(|v| v.pass), "{}", report.to_json());
    assert!(report.moments.iter().all(|m| m.mean_ok));
    assert!(report.max_balance_residual <= 1e-9);
}

#[test]
fn one_disturbance_makes_balancing_modes_agree() {
    let c = case("case5.json");
    let fc = ForecastSet::artificial(&c, 12, 24.0, Some(&reference_factor())).unwrap();
    let (_, local) = solve_case(&c, &fc, &ScenarioConfig::new(Scenario::S2, 12));
    let (_, global) = solve_case(&c, &fc, &ScenarioConfig::new(Scenario::S2, 12).with_balancing(Balancing::Global));
    assert_relative_eq!(local.objective, global.objective, max_relative = 1e-6);
}

#[test]
fn infeasible_fixtures_are_flagged() {
    for (name, flag) in [
        ("case5_overload.json", InfeasibilityFlag::DemandExceedsCapacity),
        ("case5_ramp_limited.json", InfeasibilityFlag::RampLimited),
    ] {
        let c = case(name);
        let fc = ForecastSet::artificial(&c, 12, 24.0, Some(&reference_factor())).unwrap();
        let cfg = ScenarioConfig::new(Scenario::S2, 12);
        let (_, pol) = solve_case(&c, &fc, &cfg);
        assert_eq!(pol.status, SolveStatus::Infeasible, "{name}");
        assert!(diagnose_infeasibility(&c, &fc, &cfg).has(flag), "{name}");
    }
}

#[test]
fn bad_risk_level_is_rejected() {
    let c = case("case5.json");
    let fc = ForecastSet::artificial(&c, 12, 24.0, None).unwrap();
    assert!(build(&c, &fc, &ScenarioConfig::new(Scenario::S2, 12).with_epsilon(0.7)).is_err());
    assert!(build(&c, &fc, &ScenarioConfig::new(Scenario::S2, 12).with_epsilon(0.0)).is_err());
}
