use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use stochopf::forecast::ForecastSet;
use stochopf::netcase::GridCase;
use stochopf::socp::{build, lambda_of_epsilon, ChanceRecord, Problem, ScenarioConfig};
use stochopf::solve::{
    diagnose_infeasibility, extract_policies, solve, InfeasibilityReport, PolicySolution,
    SolveStatus, SolverOptions,
};
use stochopf::validate::{analytic_moments, validate_solution, Kind, Moments, Quantity, ValidationReport};

use crate::manifest::RunManifest;
use crate::RunError;

/// Solved scenario plus everything written to disk.
#[derive(Debug)]
pub struct RunOutput {
    pub problem: Problem,
    pub policies: PolicySolution,
    pub moments: BTreeMap<Quantity, Moments>,
    pub validation: Option<ValidationReport>,
    pub costs: CostSummary,
    pub files: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostSummary {
    pub case: String,
    pub scenario: String,
    pub balancing: String,
    pub epsilon: f64,
    pub horizon: usize,
    pub status: SolveStatus,
    pub objective: f64,
    /// Expected cost per generator over the horizon.
    pub generator_costs: Vec<f64>,
    pub policy_variables: usize,
    pub iterations: u32,
    pub solve_time: f64,
}

/// Builds and solves one scenario, without touching the filesystem.
pub fn solve_scenario(
    case: &GridCase,
    forecasts: &ForecastSet,
    config: &ScenarioConfig,
    solver: &SolverOptions,
) -> Result<(Problem, PolicySolution), RunError> {
    let problem = build(case, forecasts, config)?;
    let raw = solve(&problem.program, solver);
    let policies = extract_policies(&raw, &problem.layout);
    Ok((problem, policies))
}

/// Loads, builds, solves, validates and writes `schedule.csv`, `costs.json`
/// and `validation.json`. A non-optimal solve writes `costs.json` and
/// `infeasibility.json` and returns [`RunError::NotOptimal`].
pub fn run_scenario(manifest: &RunManifest) -> Result<RunOutput, RunError> {
    manifest.validate()?;
    let case = manifest.load_case()?;
    let forecasts = manifest.forecasts(&case)?;
    let config = manifest.config();
    fs::create_dir_all(&manifest.out).map_err(|e| RunError::io(&manifest.out, e))?;

    let (problem, policies) = solve_scenario(&case, &forecasts, &config, &manifest.solver)?;
    let mut files = Vec::new();
    let moments = if policies.status == SolveStatus::Optimal {
        analytic_moments(&policies, &problem.layout, &case)
    } else {
        BTreeMap::new()
    };
    let costs = CostSummary {
        case: case.name.clone(),
        scenario: manifest.scenario.to_string(),
        balancing: manifest.balancing.to_string(),
        epsilon: manifest.epsilon,
        horizon: manifest.horizon,
        status: policies.status,
        objective: policies.objective,
        generator_costs: generator_costs(&case, &moments),
        policy_variables: problem.program.n_policy_vars(),
        iterations: policies.iterations,
        solve_time: policies.solve_time,
    };
    files.push(write_json(&manifest.out.join("costs.json"), &costs)?);

    if policies.status != SolveStatus::Optimal {
        let report = diagnose_infeasibility(&case, &forecasts, &config);
        files.push(write_json(&manifest.out.join("infeasibility.json"), &report)?);
        return Err(RunError::NotOptimal {
            status: policies.status,
            report,
        });
    }

    let schedule = schedule_rows(&case, &problem, &moments, manifest.epsilon)?;
    files.push(write_schedule(&manifest.out.join("schedule.csv"), &schedule)?);

    let validation = (manifest.samples > 0).then(|| {
        validate_solution(
            &policies,
            &problem.layout,
            &case,
            &problem.program.chance,
            manifest.samples,
            manifest.seed,
        )
    });
    if let Some(report) = &validation {
        let path = manifest.out.join("validation.json");
        fs::write(&path, report.to_json()).map_err(|e| RunError::io(&path, e))?;
        files.push(path);
    }

    Ok(RunOutput {
        problem,
        policies,
        moments,
        validation,
        costs,
        files,
    })
}

fn generator_costs(case: &GridCase, moments: &BTreeMap<Quantity, Moments>) -> Vec<f64> {
    case.generators
        .iter()
        .enumerate()
        .map(|(g, gen)| {
            moments
                .iter()
                .filter(|(q, _)| q.kind == Kind::U && q.index == g)
                .map(|(_, m)| gen.gamma2 * (m.mean * m.mean + m.variance) + gen.gamma1 * m.mean + gen.gamma0)
                .sum()
        })
        .collect()
}

/// One line of `schedule.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct ScheduleRow {
    pub quantity: String,
    pub index: usize,
    /// Bus id of the device, or line id for flows.
    pub bus: usize,
    /// 1-based period; for `e` the number of completed steps (0 = initial).
    pub t: usize,
    pub mean: f64,
    pub std: f64,
    pub lambda: f64,
    pub band_lo: f64,
    pub band_hi: f64,
    pub limit_lo: f64,
    pub limit_hi: f64,
}

fn kind_name(kind: Kind) -> &'static str {
    match kind {
        Kind::D => "d",
        Kind::U => "u",
        Kind::S => "s",
        Kind::E => "e",
        Kind::Du => "du",
        Kind::C => "c",
    }
}

/// Limits and risk level per quantity. Energy at the last step carries both
/// the capacity and the terminal band; the tighter side wins.
fn limits(records: &[ChanceRecord]) -> BTreeMap<Quantity, (f64, f64, f64)> {
    let mut out: BTreeMap<Quantity, (f64, f64, f64)> = BTreeMap::new();
    for r in records {
        let q = Quantity::from_record(r);
        let slot = out.entry(q).or_insert((f64::NEG_INFINITY, f64::INFINITY, r.epsilon));
        slot.0 = slot.0.max(r.lower);
        slot.1 = slot.1.min(r.upper);
        slot.2 = slot.2.min(r.epsilon);
    }
    out
}

pub fn schedule_rows(
    case: &GridCase,
    problem: &Problem,
    moments: &BTreeMap<Quantity, Moments>,
    default_epsilon: f64,
) -> Result<Vec<ScheduleRow>, RunError> {
    let lim = limits(&problem.program.chance);
    let mut rows = Vec::with_capacity(moments.len());
    for (q, m) in moments {
        let (lo, hi, eps) = lim
            .get(q)
            .copied()
            .unwrap_or((f64::NEG_INFINITY, f64::INFINITY, default_epsilon));
        let lambda = lambda_of_epsilon(eps)?;
        let bus = match q.kind {
            Kind::D => case.bus_id(case.disturbances[q.index].bus),
            Kind::U | Kind::Du => case.bus_id(case.generators[q.index].bus),
            Kind::S | Kind::E => case.bus_id(case.storages[q.index].bus),
            Kind::C => case.lines[q.index].id,
        };
        let t = if q.kind == Kind::E { q.t } else { q.t + 1 };
        let std = m.variance.max(0.0).sqrt();
        rows.push(ScheduleRow {
            quantity: kind_name(q.kind).to_string(),
            index: q.index,
            bus,
            t,
            mean: m.mean,
            std,
            lambda,
            band_lo: m.mean - lambda * std,
            band_hi: m.mean + lambda * std,
            limit_lo: lo,
            limit_hi: hi,
        });
    }
    Ok(rows)
}

fn write_schedule(path: &Path, rows: &[ScheduleRow]) -> Result<PathBuf, RunError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| RunError::io(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| RunError::io(path, e))?;
    }
    w.flush().map_err(|e| RunError::io(path, e))?;
    Ok(path.to_path_buf())
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<PathBuf, RunError> {
    let text = serde_json::to_string_pretty(value).expect("output serialises");
    fs::write(path, text + "\n").map_err(|e| RunError::io(path, e))?;
    Ok(path.to_path_buf())
}

/// Reads `schedule.csv` back.
pub fn read_schedule(path: &Path) -> Result<Vec<ScheduleRow>, RunError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| RunError::io(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| RunError::io(path, e)))
        .collect()
}

/// One-line summary of a screening report.
pub fn describe(report: &InfeasibilityReport) -> String {
    if report.findings.is_empty() {
        return "no screening finding".into();
    }
    report
        .findings
        .iter()
        .map(|f| match f.t {
            Some(t) => format!("{:?} at t={t}: {}", f.flag, f.detail),
            None => format!("{:?}: {}", f.flag, f.detail),
        })
        .collect::<Vec<_>>()
        .join("; ")
}
