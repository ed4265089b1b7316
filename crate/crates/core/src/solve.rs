//! Conic backend adapter and policy extraction.

use crate::expr::LinExpr;
use crate::forecast::ForecastSet;
use crate::moments::Balancing;
use crate::netcase::GridCase;
use crate::socp::{ConicProgram, Layout, ScenarioConfig};
use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::NumericalFailure => "numerical_failure",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol_feas: f64,
    pub tol_gap_rel: f64,
    pub max_iter: u32,
    pub verbose: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol_feas: 1e-8,
            tol_gap_rel: 1e-8,
            max_iter: 200,
            verbose: false,
        }
    }
}

impl SolverOptions {
    /// Same tolerance for feasibility and relative gap.
    pub fn with_tolerance(tol: f64) -> Self {
        Self {
            tol_feas: tol,
            tol_gap_rel: tol,
            ..Self::default()
        }
    }
}

/// What a backend hands back.
#[derive(Debug, Clone)]
pub struct RawResult {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: u32,
    pub solve_time: f64,
    pub gap_rel: f64,
    /// Backend-specific status text.
    pub detail: String,
}

impl RawResult {
    fn without_solve(status: SolveStatus, n: usize, detail: String) -> Self {
        Self {
            status,
            x: vec![f64::NAN; n],
            objective: f64::NAN,
            iterations: 0,
            solve_time: 0.0,
            gap_rel: f64::NAN,
            detail,
        }
    }
}

pub trait ConicBackend {
    fn solve(&self, program: &ConicProgram, options: &SolverOptions) -> RawResult;
}

/// Interior-point backend built on Clarabel.
#[derive(Debug, Clone, Copy, Default)]
pub struct ClarabelBackend;

/// Rows of `s = b − A·x` for one affine expression.
struct RowBuilder {
    rows: usize,
    i: Vec<usize>,
    j: Vec<usize>,
    v: Vec<f64>,
    b: Vec<f64>,
}

impl RowBuilder {
    fn push(&mut self, e: &LinExpr) {
        for &(var, c) in e.terms() {
            self.i.push(self.rows);
            self.j.push(var.0);
            self.v.push(-c);
        }
        self.b.push(e.constant_term());
        self.rows += 1;
    }
}

impl ConicBackend for ClarabelBackend {
    fn solve(&self, program: &ConicProgram, options: &SolverOptions) -> RawResult {
        let n = program.n_vars();
        if !program.conflicts.is_empty() {
            return RawResult::without_solve(
                SolveStatus::Infeasible,
                n,
                format!("constant constraint violated: {}", program.conflicts[0]),
            );
        }
        let mut rb = RowBuilder {
            rows: 0,
            i: Vec::new(),
            j: Vec::new(),
            v: Vec::new(),
            b: Vec::new(),
        };
        let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
        if !program.equalities.is_empty() {
            program.equalities.iter().for_each(|e| rb.push(e));
            cones.push(SupportedConeT::ZeroConeT(program.equalities.len()));
        }
        if !program.inequalities.is_empty() {
            program.inequalities.iter().for_each(|e| rb.push(e));
            cones.push(SupportedConeT::NonnegativeConeT(program.inequalities.len()));
        }
        for c in &program.socs {
            rb.push(&c.t);
            c.v.iter().for_each(|e| rb.push(e));
            cones.push(SupportedConeT::SecondOrderConeT(1 + c.v.len()));
        }
        // 2ab ≥ ‖v‖²  ⇔  ‖(a − b, √2·v)‖ ≤ a + b
        let sqrt2 = std::f64::consts::SQRT_2;
        for c in &program.rotated_socs {
            rb.push(&(&c.a + &c.b));
            rb.push(&(&c.a - &c.b));
            c.v.iter().for_each(|e| rb.push(&e.scaled(sqrt2)));
            cones.push(SupportedConeT::SecondOrderConeT(2 + c.v.len()));
        }

        let a = CscMatrix::new_from_triplets(rb.rows, n, rb.i, rb.j, rb.v);
        let p = CscMatrix::zeros((n, n));
        let mut q = vec![0.0; n];
        for &(var, c) in program.objective.terms() {
            q[var.0] += c;
        }
        let settings = DefaultSettings {
            tol_feas: options.tol_feas,
            tol_gap_rel: options.tol_gap_rel,
            max_iter: options.max_iter,
            verbose: options.verbose,
            // Supernodal factorisation; the policy cones produce dense fronts.
            direct_solve_method: "faer".to_string(),
            ..DefaultSettings::default()
        };
        let started = Instant::now();
        let mut solver = match DefaultSolver::new(&p, &q, &a, &rb.b, &cones, settings) {
            Ok(s) => s,
            Err(e) => {
                return RawResult::without_solve(SolveStatus::NumericalFailure, n, e.to_string())
            }
        };
        solver.solve();
        let elapsed = started.elapsed().as_secs_f64();
        let sol = &solver.solution;
        let status = match sol.status {
            SolverStatus::Solved => SolveStatus::Optimal,
            SolverStatus::AlmostSolved => {
                // Reduced accuracy is accepted only if the point is feasible.
                if program.check(&sol.x) <= 1e-6 && solver.info.gap_rel <= 1e-6 {
                    SolveStatus::Optimal
                } else {
                    SolveStatus::NumericalFailure
                }
            }
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                SolveStatus::Infeasible
            }
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
                SolveStatus::Unbounded
            }
            _ => SolveStatus::NumericalFailure,
        };
        RawResult {
            status,
            x: sol.x.clone(),
            objective: sol.obj_val + program.objective.constant_term(),
            iterations: sol.iterations,
            solve_time: elapsed,
            gap_rel: solver.info.gap_rel,
            detail: format!("{:?}", sol.status),
        }
    }
}

/// Solves with the default backend.
pub fn solve(program: &ConicProgram, options: &SolverOptions) -> RawResult {
    ClarabelBackend.solve(program, options)
}

// ---------------------------------------------------------------------------
// Policies

/// Numeric policies. Response matrices are `T × T` lower-triangular, one per
/// device and disturbance (repeated under global balancing).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicySolution {
    pub status: SolveStatus,
    pub objective: f64,
    pub solve_time: f64,
    pub iterations: u32,
    pub balancing: Balancing,
    pub horizon: usize,
    pub u_nominal: Vec<Vec<f64>>,
    pub u_response: Vec<Vec<DMatrix<f64>>>,
    pub s_nominal: Vec<Vec<f64>>,
    pub s_response: Vec<Vec<DMatrix<f64>>>,
    /// Largest balance residual before repair.
    pub balance_residual: f64,
    #[serde(skip)]
    pub x: Vec<f64>,
}

impl PolicySolution {
    pub fn n_gen(&self) -> usize {
        self.u_nominal.len()
    }

    pub fn n_sto(&self) -> usize {
        self.s_nominal.len()
    }

    /// Device-ordered (generators, then storages) view: (nominal, responses).
    fn device(&self, dev: usize) -> (&Vec<f64>, &Vec<DMatrix<f64>>) {
        if dev < self.n_gen() {
            (&self.u_nominal[dev], &self.u_response[dev])
        } else {
            let s = dev - self.n_gen();
            (&self.s_nominal[s], &self.s_response[s])
        }
    }

    fn device_mut(&mut self, dev: usize) -> (&mut Vec<f64>, &mut Vec<DMatrix<f64>>) {
        let n_gen = self.n_gen();
        if dev < n_gen {
            (&mut self.u_nominal[dev], &mut self.u_response[dev])
        } else {
            (&mut self.s_nominal[dev - n_gen], &mut self.s_response[dev - n_gen])
        }
    }

    /// Largest residual of the balance equalities.
    pub fn balance_error(&self, layout: &Layout) -> f64 {
        let (mean, resp) = balance_residuals(self, layout);
        mean.iter()
            .chain(resp.iter().flat_map(|m| m.iter()))
            .fold(0.0f64, |a, &r| a.max(r.abs()))
    }
}

fn balance_residuals(sol: &PolicySolution, layout: &Layout) -> (Vec<f64>, Vec<DMatrix<f64>>) {
    let horizon = sol.horizon;
    let n_dev = sol.n_gen() + sol.n_sto();
    let mean = (0..horizon)
        .map(|t| {
            layout.load_total[t]
                + layout.disturbances.iter().map(|f| f.mean[t]).sum::<f64>()
                + (0..n_dev).map(|d| sol.device(d).0[t]).sum::<f64>()
        })
        .collect();
    let resp = layout
        .disturbances
        .iter()
        .enumerate()
        .map(|(j, f)| {
            let mut r = f.factor.clone();
            for d in 0..n_dev {
                r += &sol.device(d).1[j];
            }
            r
        })
        .collect();
    (mean, resp)
}

/// Reads the numeric policies out of a solver result.
///
/// Balance residuals left by the interior-point tolerance are spread evenly
/// over all devices, so the returned policies balance to rounding error.
pub fn extract_policies(result: &RawResult, layout: &Layout) -> PolicySolution {
    let policy = &layout.policy;
    let horizon = policy.horizon();
    let x = &result.x;
    let n_dist = layout.disturbances.len();
    let read = |dev: usize| -> (Vec<f64>, Vec<DMatrix<f64>>) {
        let nominal = (0..horizon).map(|t| x[policy.nominal(dev, t).0]).collect();
        let resp = (0..n_dist)
            .map(|j| {
                DMatrix::from_fn(horizon, horizon, |t, k| {
                    policy.response(dev, j, t, k).map_or(0.0, |v| x[v.0])
                })
            })
            .collect();
        (nominal, resp)
    };
    let (u_nominal, u_response): (Vec<_>, Vec<_>) = (0..policy.n_gen())
        .map(|g| read(policy.generator(g)))
        .unzip();
    let (s_nominal, s_response): (Vec<_>, Vec<_>) = (0..policy.n_sto())
        .map(|s| read(policy.storage(s)))
        .unzip();
    let mut sol = PolicySolution {
        status: result.status,
        objective: result.objective,
        solve_time: result.solve_time,
        iterations: result.iterations,
        balancing: policy.mode(),
        horizon,
        u_nominal,
        u_response,
        s_nominal,
        s_response,
        balance_residual: 0.0,
        x: x.clone(),
    };
    if result.status != SolveStatus::Optimal {
        return sol;
    }
    sol.balance_residual = sol.balance_error(layout);
    let n_dev = policy.n_devices();
    if n_dev == 0 {
        return sol;
    }
    let (mean, resp) = balance_residuals(&sol, layout);
    let share = 1.0 / n_dev as f64;
    for d in 0..n_dev {
        let (nom, r) = sol.device_mut(d);
        for t in 0..horizon {
            nom[t] -= share * mean[t];
        }
        for (j, m) in r.iter_mut().enumerate() {
            for t in 0..horizon {
                for k in 0..=t {
                    m[(t, k)] -= share * resp[j][(t, k)];
                }
            }
        }
    }
    sol
}

// ---------------------------------------------------------------------------
// Screening

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfeasibilityFlag {
    DemandExceedsCapacity,
    RampLimited,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub flag: InfeasibilityFlag,
    /// 1-based period, if the finding is tied to one.
    pub t: Option<usize>,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InfeasibilityReport {
    pub findings: Vec<Finding>,
}

impl InfeasibilityReport {
    pub fn has(&self, flag: InfeasibilityFlag) -> bool {
        self.findings.iter().any(|f| f.flag == flag)
    }

    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }
}

/// Pre-solve screening on expected values: net demand against the total
/// capacity per period and against stored energy, and the period-to-period
/// change in net demand against the fleet's ramp and storage power range.
pub fn diagnose_infeasibility(
    case: &GridCase,
    forecasts: &ForecastSet,
    config: &ScenarioConfig,
) -> InfeasibilityReport {
    let horizon = config.horizon;
    let mut demand = vec![0.0; horizon];
    for m in forecasts.loads.values() {
        for t in 0..horizon.min(m.len()) {
            demand[t] -= m[t];
        }
    }
    for f in forecasts.disturbances.values() {
        for t in 0..horizon.min(f.horizon()) {
            demand[t] -= f.mean[t];
        }
    }
    let gen_max: f64 = case.generators.iter().map(|g| g.u_max).sum();
    let ramp_up: f64 = case.generators.iter().map(|g| g.ramp_max).sum();
    let ramp_down: f64 = case.generators.iter().map(|g| -g.ramp_min).sum();
    let storages: &[_] = if config.storage_enabled {
        &case.storages
    } else {
        &[]
    };
    let sto_max: f64 = storages.iter().map(|s| s.s_max).sum();
    let sto_swing: f64 = storages.iter().map(|s| s.s_max - s.s_min).sum();
    let energy: f64 = storages.iter().map(|s| (s.e_ic_mean - s.e_min).max(0.0)).sum();

    let mut report = InfeasibilityReport::default();
    let tol = 1e-9;
    for t in 0..horizon {
        if demand[t] > gen_max + sto_max + tol {
            report.findings.push(Finding {
                flag: InfeasibilityFlag::DemandExceedsCapacity,
                t: Some(t + 1),
                detail: format!(
                    "net demand {:.4} exceeds generation {:.4} plus storage output {:.4}",
                    demand[t], gen_max, sto_max
                ),
            });
        }
    }
    let deficit: f64 = demand.iter().map(|d| (d - gen_max).max(0.0)).sum::<f64>() * config.h;
    if deficit > energy + tol && !report.has(InfeasibilityFlag::DemandExceedsCapacity) {
        report.findings.push(Finding {
            flag: InfeasibilityFlag::DemandExceedsCapacity,
            t: None,
            detail: format!(
                "energy shortfall {deficit:.4} beyond generation exceeds stored energy {energy:.4}"
            ),
        });
    }
    for t in 1..horizon {
        let step = demand[t] - demand[t - 1];
        let limit = if step > 0.0 { ramp_up } else { ramp_down } + sto_swing;
        if step.abs() > limit + tol {
            report.findings.push(Finding {
                flag: InfeasibilityFlag::RampLimited,
                t: Some(t + 1),
                detail: format!(
                    "net demand changes by {step:.4} but generators ramp at most {:.4} and storage swings {sto_swing:.4}",
                    if step > 0.0 { ramp_up } else { ramp_down }
                ),
            });
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::VarLabel;
    use approx::assert_abs_diff_eq;

    #[test]
    fn minimise_x_above_one() {
        let mut p = ConicProgram::new();
        let x = p.add_var(VarLabel::Auxiliary { index: 0 });
        p.objective = LinExpr::var(x);
        p.add_inequality(LinExpr::from_terms([(x, 1.0)], -1.0), || "x ≥ 1".into());
        let r = solve(&p, &SolverOptions::default());
        assert_eq!(r.status, SolveStatus::Optimal);
        assert_abs_diff_eq!(r.x[0], 1.0, epsilon = 1e-7);
    }

    #[test]
    fn contradictory_bounds_are_infeasible() {
        let mut p = ConicProgram::new();
        let x = p.add_var(VarLabel::Auxiliary { index: 0 });
        p.add_inequality(LinExpr::from_terms([(x, 1.0)], -1.0), || "x ≥ 1".into());
        p.add_inequality(LinExpr::from_terms([(x, -1.0)], 0.0), || "x ≤ 0".into());
        assert_eq!(solve(&p, &SolverOptions::default()).status, SolveStatus::Infeasible);
    }

    #[test]
    fn constant_conflict_skips_solver() {
        let mut p = ConicProgram::new();
        p.add_var(VarLabel::Auxiliary { index: 0 });
        p.add_equality(LinExpr::constant(1.0), || "1 = 0".into());
        let r = solve(&p, &SolverOptions::default());
        assert_eq!(r.status, SolveStatus::Infeasible);
        assert_eq!(r.iterations, 0);
    }

    #[test]
    fn rotated_cone_epigraph() {
        // min z s.t. z ≥ (x − 2)² with x free
        let mut p = ConicProgram::new();
        let x = p.add_var(VarLabel::Auxiliary { index: 0 });
        let z = p.add_var(VarLabel::Auxiliary { index: 1 });
        p.objective = LinExpr::var(z);
        p.add_rotated_soc(LinExpr::var(z), LinExpr::constant(0.5), vec![LinExpr::from_terms([(x, 1.0)], -2.0)]);
        let r = solve(&p, &SolverOptions::default());
        assert_eq!(r.status, SolveStatus::Optimal);
        assert_abs_diff_eq!(r.x[0], 2.0, epsilon = 1e-4);
        assert_abs_diff_eq!(r.objective, 0.0, epsilon = 1e-7);
    }
}
