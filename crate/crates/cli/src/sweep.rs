use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use stochopf::forecast::{Forecast, ForecastSet};
use stochopf::moments::{count_decision_vars, Balancing};
use stochopf::netcase::{Disturbance, GridCase};
use stochopf::socp::ScenarioConfig;
use stochopf::solve::SolverOptions;

use crate::manifest::RunManifest;
use crate::run::solve_scenario;
use crate::RunError;

/// One line of `sweep.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub case: String,
    pub n_d: usize,
    pub n_s: usize,
    pub balancing: String,
    pub epsilon: f64,
    pub policy_variables: usize,
    pub expected_variables: usize,
    pub solve_time: f64,
    pub objective: f64,
    pub status: String,
}

/// Rescales `case`/`forecasts` to `n_d` disturbances and `n_s` storages.
///
/// Disturbances beyond `n_d` become certain loads (their forecast mean).
/// Missing ones come from splitting the last kept disturbance into equal parts
/// placed at further buses, heaviest load first, so every part shares one
/// factor. Missing storages are copies of the last one at buses without a
/// generator or storage.
pub fn resize_case(
    case: &GridCase,
    forecasts: &ForecastSet,
    n_d: usize,
    n_s: usize,
) -> Result<(GridCase, ForecastSet), RunError> {
    if n_d == 0 {
        return Err(RunError::Manifest("sweep needs at least one disturbance".into()));
    }
    if case.disturbances.is_empty() {
        return Err(RunError::Manifest(format!("{} has no disturbance to sweep", case.name)));
    }
    let mut out = case.clone();
    let mut fs_out = forecasts.clone();
    let forecast_of = |d: &Disturbance| -> Result<Forecast, RunError> {
        forecasts
            .disturbances
            .get(&case.bus_id(d.bus))
            .cloned()
            .ok_or_else(|| RunError::Manifest(format!("no forecast for bus {}", case.bus_id(d.bus))))
    };

    if n_d <= case.disturbances.len() {
        for d in &case.disturbances[n_d..] {
            let bus = case.bus_id(d.bus);
            let f = forecast_of(d)?;
            fs_out.disturbances.remove(&bus);
            let slot = fs_out.loads.entry(bus).or_insert_with(|| nalgebra::DVector::zeros(f.horizon()));
            *slot += &f.mean;
            if !out.loads.iter().any(|l| l.bus == d.bus) {
                out.loads.push(stochopf::netcase::Load {
                    bus: d.bus,
                    d_nom: f.mean.iter().sum::<f64>() / f.horizon().max(1) as f64,
                });
            }
        }
        out.disturbances.truncate(n_d);
    } else {
        let last = case.disturbances.last().expect("nonempty");
        let base = forecast_of(last)?;
        let parts = n_d - case.disturbances.len() + 1;
        let mut free: Vec<usize> = (0..case.n_buses())
            .filter(|b| !case.disturbances.iter().any(|d| d.bus == *b))
            .collect();
        let load_at = |b: usize| -> f64 {
            case.loads
                .iter()
                .filter(|l| l.bus == b)
                .map(|l| l.d_nom.abs())
                .sum()
        };
        free.sort_by(|a, b| load_at(*b).total_cmp(&load_at(*a)).then(a.cmp(b)));
        if free.len() < parts - 1 {
            return Err(RunError::Manifest(format!(
                "{} has {} buses; cannot place {n_d} disturbances",
                case.name,
                case.n_buses()
            )));
        }
        let share = Forecast::new(&base.mean / parts as f64, &base.factor / parts as f64)?;
        fs_out.disturbances.insert(case.bus_id(last.bus), share.clone());
        for &b in &free[..parts - 1] {
            out.disturbances.push(Disturbance {
                bus: b,
                source: last.source.clone(),
                capacity: last.capacity.map(|c| c / parts as f64),
                d_nom: None,
            });
            fs_out.disturbances.insert(case.bus_id(b), share.clone());
        }
    }

    if n_s <= case.storages.len() {
        out.storages.truncate(n_s);
    } else {
        let template = case.storages.last().cloned().ok_or_else(|| {
            RunError::Manifest(format!("{} has no storage to replicate", case.name))
        })?;
        let free: Vec<usize> = (0..case.n_buses())
            .filter(|b| {
                !case.generators.iter().any(|g| g.bus == *b)
                    && !case.storages.iter().any(|s| s.bus == *b)
            })
            .collect();
        let extra = n_s - case.storages.len();
        if free.len() < extra {
            return Err(RunError::Manifest(format!(
                "{} has room for {} more storages, asked for {extra}",
                case.name,
                free.len()
            )));
        }
        for &b in &free[..extra] {
            let mut s = template.clone();
            s.bus = b;
            out.storages.push(s);
        }
    }
    Ok((out, fs_out))
}

fn sweep_point(
    case: &GridCase,
    forecasts: &ForecastSet,
    manifest: &RunManifest,
    (n_d, n_s): (usize, usize),
    epsilon: f64,
    balancing: Balancing,
    solver: &SolverOptions,
) -> Result<SweepRow, RunError> {
    let (c, f) = resize_case(case, forecasts, n_d, n_s)?;
    let config = ScenarioConfig::new(manifest.scenario, manifest.horizon)
        .with_balancing(balancing)
        .with_epsilon(epsilon);
    let n_s_used = if config.storage_enabled { c.storages.len() } else { 0 };
    let (problem, policies) = solve_scenario(&c, &f, &config, solver)?;
    Ok(SweepRow {
        case: case.name.clone(),
        n_d,
        n_s: n_s_used,
        balancing: balancing.to_string(),
        epsilon,
        policy_variables: problem.program.n_policy_vars(),
        expected_variables: count_decision_vars(balancing, c.generators.len(), n_s_used, n_d, manifest.horizon),
        solve_time: policies.solve_time,
        objective: policies.objective,
        status: policies.status.to_string(),
    })
}

/// Runs every sweep point, up to `jobs` at a time, and writes `sweep.csv`
/// sorted by (N_d, N_s, balancing, ε). Per-point results land in `sweep/`.
pub fn run_sweep(manifest: &RunManifest) -> Result<Vec<SweepRow>, RunError> {
    manifest.validate()?;
    let axes = manifest
        .sweep
        .as_ref()
        .filter(|a| !a.is_empty())
        .ok_or_else(|| RunError::Manifest("sweep axes are empty".into()))?;
    let case = manifest.load_case()?;
    let forecasts = manifest.forecasts(&case)?;

    let mut points = Vec::new();
    for &p in &axes.points {
        for &b in &axes.balancings {
            for &e in &axes.epsilons {
                points.push((p, b, e));
            }
        }
    }
    let point_dir = manifest.out.join("sweep");
    fs::create_dir_all(&point_dir).map_err(|e| RunError::io(&point_dir, e))?;

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, Result<SweepRow, RunError>)>> = Mutex::new(Vec::new());
    let jobs = manifest.jobs.min(points.len()).max(1);
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(p, b, e)) = points.get(i) else { break };
                let row = sweep_point(&case, &forecasts, manifest, p, e, b, &manifest.solver);
                if let Ok(r) = &row {
                    let path = point_dir.join(format!("point_{:04}.json", i));
                    let _ = crate::run::write_json(&path, r);
                }
                results.lock().expect("no poisoned sweep worker").push((i, row));
            });
        }
    });

    let mut results = results.into_inner().expect("workers finished");
    results.sort_by_key(|(i, _)| *i);
    let mut rows = results
        .into_iter()
        .map(|(_, r)| r)
        .collect::<Result<Vec<_>, _>>()?;
    rows.sort_by(|a, b| {
        (a.n_d, a.n_s, &a.balancing)
            .cmp(&(b.n_d, b.n_s, &b.balancing))
            .then(a.epsilon.total_cmp(&b.epsilon))
    });
    let path: PathBuf = manifest.out.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| RunError::io(&path, e))?;
    for r in &rows {
        w.serialize(r).map_err(|e| RunError::io(&path, e))?;
    }
    w.flush().map_err(|e| RunError::io(&path, e))?;
    Ok(rows)
}
