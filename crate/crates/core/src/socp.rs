//! Assembly of the second-order cone program.
//!
//! A [`ConicProgram`] is solver-neutral: linear equalities `e = 0`, linear
//! inequalities `e ≥ 0`, second-order cones `‖v‖ ≤ t` and rotated cones
//! `2ab ≥ ‖v‖²` (`a, b ≥ 0`), all over [`LinExpr`]s, plus a linear objective to
//! be minimised. [`build`] fills one from a case, forecasts and a scenario.

use crate::expr::{LinExpr, VarAllocator, VarId, VarLabel};
use crate::forecast::{Forecast, ForecastSet};
use crate::moments::{
    generation_form, line_flow_form, net_power_form, ramp_form, storage_injection_form,
    storage_state_form, AffineForm, Balancing, BusDevices, GermIndex, PolicyVars,
};
use crate::netcase::{compute_ptdf, CaseError, GridCase, Ptdf};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

/// Constants in constraints that become variable-free are compared with this.
const CONSTANT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("no forecast for disturbance at bus {0}")]
    MissingForecast(usize),
    #[error("no load profile for load at bus {0}")]
    MissingLoad(usize),
    #[error("forecast for bus {bus} covers {got} periods, scenario needs {expected}")]
    Horizon {
        bus: usize,
        expected: usize,
        got: usize,
    },
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("risk level {0} outside (0, 0.5]")]
    Domain(f64),
    #[error(transparent)]
    Case(#[from] CaseError),
}

// ---------------------------------------------------------------------------
// Scenario

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// No storage.
    S1,
    /// Storage.
    S2,
    /// Storage plus a cap on the generators' standard deviation.
    S3,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::S1 => "s1",
            Scenario::S2 => "s2",
            Scenario::S3 => "s3",
        })
    }
}

impl std::str::FromStr for Scenario {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "s1" => Ok(Scenario::S1),
            "s2" => Ok(Scenario::S2),
            "s3" => Ok(Scenario::S3),
            other => Err(format!("unknown scenario `{other}` (expected s1|s2|s3)")),
        }
    }
}

/// Generator standard-deviation cap used by [`Scenario::S3`].
pub const DEFAULT_VARIANCE_CAP: f64 = 0.01;

/// How the terminal energy band is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalBand {
    /// Per-unit energy, as given.
    #[default]
    Absolute,
    /// Fraction of the storage's `e_max`.
    CapacityFraction,
}

/// Families of chance-constrained quantities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Generation,
    Ramp,
    LineFlow,
    StorageInjection,
    StorageEnergy,
    TerminalEnergy,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::Generation,
        Family::Ramp,
        Family::LineFlow,
        Family::StorageInjection,
        Family::StorageEnergy,
        Family::TerminalEnergy,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Family::Generation => "u",
            Family::Ramp => "du",
            Family::LineFlow => "c",
            Family::StorageInjection => "s",
            Family::StorageEnergy => "e",
            Family::TerminalEnergy => "e_term",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub storage_enabled: bool,
    /// Cap on the generators' standard deviation.
    pub variance_cap: Option<f64>,
    pub epsilon: f64,
    /// Per-family risk levels overriding `epsilon`.
    #[serde(default)]
    pub epsilon_overrides: BTreeMap<Family, f64>,
    pub balancing: Balancing,
    pub horizon: usize,
    /// Step length in hours.
    pub h: f64,
    #[serde(default)]
    pub terminal_band: TerminalBand,
    /// PTDF reference bus id; defaults to the first generator bus.
    #[serde(default)]
    pub reference_bus: Option<usize>,
}

impl ScenarioConfig {
    pub fn new(scenario: Scenario, horizon: usize) -> Self {
        Self {
            storage_enabled: scenario != Scenario::S1,
            variance_cap: (scenario == Scenario::S3).then_some(DEFAULT_VARIANCE_CAP),
            epsilon: 0.05,
            epsilon_overrides: BTreeMap::new(),
            balancing: Balancing::Local,
            horizon,
            h: 1.0,
            terminal_band: TerminalBand::Absolute,
            reference_bus: None,
        }
    }

    pub fn with_balancing(mut self, b: Balancing) -> Self {
        self.balancing = b;
        self
    }

    pub fn with_epsilon(mut self, eps: f64) -> Self {
        self.epsilon = eps;
        self
    }

    pub fn epsilon_for(&self, family: Family) -> f64 {
        self.epsilon_overrides
            .get(&family)
            .copied()
            .unwrap_or(self.epsilon)
    }

    pub fn validate(&self) -> Result<(), BuildError> {
        let check_eps = |e: f64| {
            if e > 0.0 && e <= 0.1 {
                Ok(())
            } else {
                Err(BuildError::Config(format!("risk level {e} outside (0, 0.1]")))
            }
        };
        check_eps(self.epsilon)?;
        for &e in self.epsilon_overrides.values() {
            check_eps(e)?;
        }
        if let Some(cap) = self.variance_cap {
            if !(cap > 0.0) {
                return Err(BuildError::Config(format!("variance cap {cap} must be > 0")));
            }
        }
        if self.horizon == 0 {
            return Err(BuildError::Config("horizon must be ≥ 1".into()));
        }
        if !(self.h > 0.0) {
            return Err(BuildError::Config("step length h must be > 0".into()));
        }
        Ok(())
    }
}

/// `λ(ε) = Ψ⁻¹(1 − ε)`, the standard normal quantile.
pub fn lambda_of_epsilon(epsilon: f64) -> Result<f64, BuildError> {
    if !(epsilon > 0.0 && epsilon <= 0.5) {
        return Err(BuildError::Domain(epsilon));
    }
    if epsilon == 0.5 {
        return Ok(0.0);
    }
    let normal = Normal::standard();
    // statrs' inverse_cdf is accurate to ~1e-9; two Newton steps on the
    // erfc-based survival function tighten it well below 1e-10.
    let mut x = normal.inverse_cdf(1.0 - epsilon);
    for _ in 0..2 {
        let f = normal.sf(x) - epsilon;
        let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        x += f / pdf;
    }
    Ok(x)
}

// ---------------------------------------------------------------------------
// Program

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Soc {
    pub t: LinExpr,
    pub v: Vec<LinExpr>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotatedSoc {
    pub a: LinExpr,
    pub b: LinExpr,
    pub v: Vec<LinExpr>,
}

/// Where a chance-constrained quantity lives. `t` is the period, or the number
/// of completed steps for storage energy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct QuantityKey {
    pub family: Family,
    pub index: usize,
    pub t: usize,
}

impl fmt::Display for QuantityKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}]({})", self.family.name(), self.index, self.t)
    }
}

/// Record of one two-sided chance constraint, kept for validation.
#[derive(Debug, Clone, PartialEq)]
pub struct ChanceRecord {
    pub key: QuantityKey,
    pub form: AffineForm,
    pub lower: f64,
    pub upper: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ConicProgram {
    variables: Vec<VarLabel>,
    pub equalities: Vec<LinExpr>,
    pub inequalities: Vec<LinExpr>,
    pub socs: Vec<Soc>,
    pub rotated_socs: Vec<RotatedSoc>,
    pub objective: LinExpr,
    /// Variable-free constraints that cannot hold. Nonempty means infeasible.
    pub conflicts: Vec<String>,
    #[serde(skip)]
    pub chance: Vec<ChanceRecord>,
}

impl VarAllocator for ConicProgram {
    fn alloc(&mut self, label: VarLabel) -> VarId {
        self.variables.push(label);
        VarId(self.variables.len() - 1)
    }
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn n_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn labels(&self) -> &[VarLabel] {
        &self.variables
    }

    pub fn n_policy_vars(&self) -> usize {
        self.variables.iter().filter(|l| l.is_policy()).count()
    }

    pub fn add_var(&mut self, label: VarLabel) -> VarId {
        self.alloc(label)
    }

    /// Fresh auxiliary variable.
    pub fn add_aux(&mut self) -> VarId {
        let index = self
            .variables
            .iter()
            .filter(|l| matches!(l, VarLabel::Auxiliary { .. }))
            .count();
        self.alloc(VarLabel::Auxiliary { index })
    }

    /// Auxiliary variable pinned to `e`; keeps long expressions out of cones.
    pub fn materialize(&mut self, e: &LinExpr) -> LinExpr {
        if e.is_constant() || e.terms().len() == 1 && e.constant_term() == 0.0 {
            return e.clone();
        }
        let z = self.add_aux();
        let mut eq = e.clone();
        eq.add_term(z, -1.0);
        self.equalities.push(eq);
        LinExpr::var(z)
    }

    /// `e = 0`
    pub fn add_equality(&mut self, e: LinExpr, what: impl FnOnce() -> String) {
        if e.is_constant() {
            if e.constant_term().abs() > CONSTANT_TOLERANCE {
                self.conflicts.push(format!("{}: {} = 0", what(), e.constant_term()));
            }
        } else {
            self.equalities.push(e);
        }
    }

    /// `e ≥ 0`
    pub fn add_inequality(&mut self, e: LinExpr, what: impl FnOnce() -> String) {
        if e.is_constant() {
            if e.constant_term() < -CONSTANT_TOLERANCE {
                self.conflicts.push(format!("{}: {} ≥ 0", what(), e.constant_term()));
            }
        } else {
            self.inequalities.push(e);
        }
    }

    /// `‖v‖ ≤ t`; collapses to a linear constraint when `v` is constant.
    pub fn add_soc(&mut self, t: LinExpr, v: Vec<LinExpr>, what: impl FnOnce() -> String) {
        let v: Vec<LinExpr> = v.into_iter().filter(|e| !e.is_zero()).collect();
        if v.iter().all(LinExpr::is_constant) {
            let norm = v.iter().map(|e| e.constant_term().powi(2)).sum::<f64>().sqrt();
            let mut slack = t;
            slack.add_constant(-norm);
            self.add_inequality(slack, what);
        } else {
            self.socs.push(Soc { t, v });
        }
    }

    pub fn add_rotated_soc(&mut self, a: LinExpr, b: LinExpr, v: Vec<LinExpr>) {
        self.rotated_socs.push(RotatedSoc { a, b, v });
    }

    /// Largest constraint violation at `x` (0 when feasible).
    pub fn check(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for e in &self.equalities {
            worst = worst.max(e.eval(x).abs());
        }
        for e in &self.inequalities {
            worst = worst.max(-e.eval(x));
        }
        for c in &self.socs {
            let n = c.v.iter().map(|e| e.eval(x).powi(2)).sum::<f64>().sqrt();
            worst = worst.max(n - c.t.eval(x));
        }
        for c in &self.rotated_socs {
            let (a, b) = (c.a.eval(x), c.b.eval(x));
            let n2 = c.v.iter().map(|e| e.eval(x).powi(2)).sum::<f64>();
            let lhs = ((a - b).powi(2) + 2.0 * n2).sqrt();
            worst = worst.max(lhs - (a + b));
        }
        if !self.conflicts.is_empty() {
            worst = f64::INFINITY;
        }
        worst
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.eval(x)
    }

    /// Stable JSON dump of variables, constraints, cones and objective.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("program serialises")
    }
}

/// Adds `P(x ≤ upper) ≥ 1−ε` and `P(x ≥ lower) ≥ 1−ε`, i.e.
/// `λ‖a‖ ≤ upper − μ` and `λ‖a‖ ≤ μ − lower`.
///
/// Infinite bounds are skipped. Forms whose coefficients do not depend on the
/// decision variables give linear constraints.
pub fn add_chance_constraint(
    program: &mut ConicProgram,
    form: &AffineForm,
    lower: f64,
    upper: f64,
    epsilon: f64,
) -> Result<(), BuildError> {
    let lambda = lambda_of_epsilon(epsilon)?;
    let name = || "chance constraint".to_string();
    if form.has_constant_coeffs() || lambda == 0.0 {
        let sigma = form.std_dev(&[]);
        let margin = if lambda == 0.0 { 0.0 } else { lambda * sigma };
        if upper.is_finite() {
            let mut e = form.mean.scaled(-1.0);
            e.add_constant(upper - margin);
            program.add_inequality(e, name);
        }
        if lower.is_finite() {
            let mut e = form.mean.clone();
            e.add_constant(-lower - margin);
            program.add_inequality(e, name);
        }
        return Ok(());
    }
    // One cone σ ≥ ‖a‖ shared by both sides, then μ + λσ ≤ upper, μ − λσ ≥ lower.
    if !upper.is_finite() && !lower.is_finite() {
        return Ok(());
    }
    let coeffs: Vec<LinExpr> = form.coeffs().map(|(_, e)| e.clone()).collect();
    let sigma = program.add_aux();
    program.add_soc(LinExpr::var(sigma), coeffs, name);
    if upper.is_finite() {
        let mut e = form.mean.scaled(-1.0);
        e.add_term(sigma, -lambda);
        e.add_constant(upper);
        program.add_inequality(e, name);
    }
    if lower.is_finite() {
        let mut e = form.mean.clone();
        e.add_term(sigma, -lambda);
        e.add_constant(-lower);
        program.add_inequality(e, name);
    }
    Ok(())
}

/// `√Var(x) ≤ σ_max`
pub fn add_std_cap(program: &mut ConicProgram, form: &AffineForm, sigma_max: f64) {
    let coeffs: Vec<LinExpr> = form.coeffs().map(|(_, e)| e.clone()).collect();
    program.add_soc(LinExpr::constant(sigma_max), coeffs, || {
        format!("standard deviation cap {sigma_max}")
    });
}

/// Adds `γ₂(E[u]² + Var u) + γ₁E[u] + γ₀` to the objective, with one epigraph
/// variable per quadratic piece.
pub fn add_objective(
    program: &mut ConicProgram,
    device: usize,
    t: usize,
    form: &AffineForm,
    gamma: (f64, f64, f64),
) {
    let (g2, g1, g0) = gamma;
    program.objective.add_scaled(&form.mean, g1);
    program.objective.add_constant(g0);
    if g2 == 0.0 {
        return;
    }
    let half = LinExpr::constant(0.5);
    let zm = program.add_var(VarLabel::CostEpigraph {
        device,
        t,
        variance: false,
    });
    program.add_rotated_soc(LinExpr::var(zm), half.clone(), vec![form.mean.clone()]);
    program.objective.add_term(zm, g2);
    if !form.is_deterministic() {
        let zv = program.add_var(VarLabel::CostEpigraph {
            device,
            t,
            variance: true,
        });
        let coeffs: Vec<LinExpr> = form.coeffs().map(|(_, e)| e.clone()).collect();
        if form.has_constant_coeffs() {
            program.add_inequality(
                {
                    let mut e = LinExpr::var(zv);
                    e.add_constant(-form.variance(&[]));
                    e
                },
                || "variance epigraph".into(),
            );
        } else {
            program.add_rotated_soc(LinExpr::var(zv), half, coeffs);
        }
        program.objective.add_term(zv, g2);
    }
}

// ---------------------------------------------------------------------------
// Layout

/// Everything needed to interpret a solution of a built program.
#[derive(Debug, Clone)]
pub struct Layout {
    pub config: ScenarioConfig,
    pub policy: PolicyVars,
    pub germ: GermIndex,
    pub ptdf: Ptdf,
    /// Disturbance forecasts in case order.
    pub disturbances: Vec<Forecast>,
    /// Per bus (dense index).
    pub buses: Vec<BusDevices>,
    /// Sum of certain load means per period.
    pub load_total: Vec<f64>,
}

impl Layout {
    pub fn n_storages(&self) -> usize {
        self.policy.n_sto()
    }

    fn forecast_refs(&self) -> Vec<&Forecast> {
        self.disturbances.iter().collect()
    }

    /// Nodal net-power forms at period `t`.
    pub fn nodal_forms(&self, t: usize) -> Vec<AffineForm> {
        let refs = self.forecast_refs();
        self.buses
            .iter()
            .map(|b| net_power_form(b, &self.policy, &refs, &self.germ, t))
            .collect()
    }
}

/// A built program together with its layout.
#[derive(Debug, Clone)]
pub struct Problem {
    pub program: ConicProgram,
    pub layout: Layout,
}

fn resolve_inputs(
    case: &GridCase,
    forecasts: &ForecastSet,
    horizon: usize,
) -> Result<(Vec<Forecast>, Vec<BusDevices>, Vec<f64>), BuildError> {
    let mut dist = Vec::with_capacity(case.disturbances.len());
    for d in &case.disturbances {
        let bus = case.bus_id(d.bus);
        let f = forecasts
            .disturbances
            .get(&bus)
            .ok_or(BuildError::MissingForecast(bus))?;
        if f.horizon() != horizon {
            return Err(BuildError::Horizon {
                bus,
                expected: horizon,
                got: f.horizon(),
            });
        }
        dist.push(f.clone());
    }
    let mut buses = vec![BusDevices::default(); case.n_buses()];
    for (g, gen) in case.generators.iter().enumerate() {
        buses[gen.bus].generator = Some(g);
    }
    for (s, sto) in case.storages.iter().enumerate() {
        buses[sto.bus].storage = Some(s);
    }
    for (j, d) in case.disturbances.iter().enumerate() {
        buses[d.bus].disturbances.push(j);
    }
    let mut total = vec![0.0; horizon];
    for l in &case.loads {
        let bus = case.bus_id(l.bus);
        let m = forecasts.loads.get(&bus).ok_or(BuildError::MissingLoad(bus))?;
        if m.len() != horizon {
            return Err(BuildError::Horizon {
                bus,
                expected: horizon,
                got: m.len(),
            });
        }
        let slot = buses[l.bus].load.get_or_insert_with(|| vec![0.0; horizon]);
        for t in 0..horizon {
            slot[t] += m[t];
            total[t] += m[t];
        }
    }
    Ok((dist, buses, total))
}

/// Mean balance per period and uncertainty balance per disturbance and
/// lower-triangular position.
pub fn add_balance(program: &mut ConicProgram, layout: &Layout) {
    let policy = &layout.policy;
    let horizon = policy.horizon();
    for t in 0..horizon {
        let mut e = LinExpr::constant(
            layout.load_total[t] + layout.disturbances.iter().map(|f| f.mean[t]).sum::<f64>(),
        );
        for dev in 0..policy.n_devices() {
            e.add_term(policy.nominal(dev, t), 1.0);
        }
        program.add_equality(e, || format!("power balance at t={}", t + 1));
    }
    for (j, f) in layout.disturbances.iter().enumerate() {
        let shared_with = match policy.mode() {
            Balancing::Global if j > 0 => Some(0),
            _ => None,
        };
        for t in 0..horizon {
            for k in 0..=t {
                match shared_with {
                    // Same response variables as disturbance 0: only the
                    // factors' difference remains.
                    Some(j0) => {
                        let diff = f.factor[(t, k)] - layout.disturbances[j0].factor[(t, k)];
                        program.add_equality(LinExpr::constant(diff), || {
                            format!(
                                "global balancing needs identical factors (disturbances {} and {}, entry ({}, {}))",
                                j0 + 1,
                                j + 1,
                                t + 1,
                                k + 1
                            )
                        });
                    }
                    None => {
                        let mut e = LinExpr::constant(f.factor[(t, k)]);
                        for dev in 0..policy.n_devices() {
                            if let Some(v) = policy.response(dev, j, t, k) {
                                e.add_term(v, 1.0);
                            }
                        }
                        program.add_equality(e, || {
                            format!("uncertainty balance of disturbance {} at ({}, {})", j + 1, t + 1, k + 1)
                        });
                    }
                }
            }
        }
    }
}

fn chance(
    program: &mut ConicProgram,
    config: &ScenarioConfig,
    key: QuantityKey,
    form: AffineForm,
    lower: f64,
    upper: f64,
) -> Result<(), BuildError> {
    let encoded = form.clone();
    chance_on(program, config, key, form, &encoded, lower, upper)
}

/// Records `form` but constrains `encoded`, an equivalent form over
/// auxiliary variables.
fn chance_on(
    program: &mut ConicProgram,
    config: &ScenarioConfig,
    key: QuantityKey,
    form: AffineForm,
    encoded: &AffineForm,
    lower: f64,
    upper: f64,
) -> Result<(), BuildError> {
    let epsilon = config.epsilon_for(key.family);
    add_chance_constraint(program, encoded, lower, upper, epsilon)?;
    program.chance.push(ChanceRecord {
        key,
        form,
        lower,
        upper,
        epsilon,
    });
    Ok(())
}

/// Energy `e(t+1) ∈ [e_min, e_max]` for every period, the terminal band on
/// the energy left at the end of the horizon, and injection
/// `s(t) ∈ [s_min, s_max]`.
pub fn add_storage_constraints(
    program: &mut ConicProgram,
    case: &GridCase,
    layout: &Layout,
) -> Result<(), BuildError> {
    let cfg = &layout.config;
    let horizon = cfg.horizon;
    for s in 0..layout.n_storages() {
        let sto = &case.storages[s];
        let e_ic = (sto.e_ic_mean, sto.e_ic_var);
        for t in 0..horizon {
            let key = QuantityKey {
                family: Family::StorageInjection,
                index: s,
                t,
            };
            let form = storage_injection_form(&layout.policy, s, &layout.germ, t);
            chance(program, cfg, key, form, sto.s_min, sto.s_max)?;
        }
        // The state is carried step by step through auxiliary variables so
        // that each energy cone only sees its own step.
        let mut state = storage_state_form(&layout.policy, s, e_ic, cfg.h, &layout.germ, 0);
        for steps in 1..=horizon {
            let inj = storage_injection_form(&layout.policy, s, &layout.germ, steps - 1);
            state.add_scaled(&inj, -cfg.h);
            state = state.map_exprs(|e| program.materialize(e));
            let key = QuantityKey {
                family: Family::StorageEnergy,
                index: s,
                t: steps,
            };
            let form = storage_state_form(&layout.policy, s, e_ic, cfg.h, &layout.germ, steps);
            chance_on(program, cfg, key, form, &state, sto.e_min, sto.e_max)?;
        }
        let (lo, hi) = match cfg.terminal_band {
            TerminalBand::Absolute => (sto.e_term_min, sto.e_term_max),
            TerminalBand::CapacityFraction => (sto.e_term_min * sto.e_max, sto.e_term_max * sto.e_max),
        };
        let key = QuantityKey {
            family: Family::TerminalEnergy,
            index: s,
            t: horizon,
        };
        let form = storage_state_form(&layout.policy, s, e_ic, cfg.h, &layout.germ, horizon);
        chance_on(program, cfg, key, form, &state, lo, hi)?;
    }
    Ok(())
}

/// Builds the full program for one scenario.
pub fn build(
    case: &GridCase,
    forecasts: &ForecastSet,
    config: &ScenarioConfig,
) -> Result<Problem, BuildError> {
    config.validate()?;
    let horizon = config.horizon;
    let reference = config.reference_bus.unwrap_or_else(|| case.default_reference());
    let ptdf = compute_ptdf(case, reference)?;
    let (disturbances, mut buses, load_total) = resolve_inputs(case, forecasts, horizon)?;
    let n_sto = if config.storage_enabled {
        case.storages.len()
    } else {
        for b in &mut buses {
            b.storage = None;
        }
        0
    };

    let mut program = ConicProgram::new();
    let policy = PolicyVars::allocate(
        &mut program,
        config.balancing,
        case.generators.len(),
        n_sto,
        disturbances.len(),
        horizon,
    );
    let uncertain_ic: Vec<bool> = case.storages[..n_sto].iter().map(|s| s.e_ic_var > 0.0).collect();
    let germ = GermIndex::new(disturbances.len(), horizon, &uncertain_ic);
    let layout = Layout {
        config: config.clone(),
        policy,
        germ,
        ptdf,
        disturbances,
        buses,
        load_total,
    };

    add_balance(&mut program, &layout);

    for (g, gen) in case.generators.iter().enumerate() {
        for t in 0..horizon {
            let u = generation_form(&layout.policy, g, &layout.germ, t);
            add_objective(
                &mut program,
                layout.policy.generator(g),
                t,
                &u,
                (gen.gamma2, gen.gamma1, gen.gamma0),
            );
            if let Some(cap) = config.variance_cap {
                add_std_cap(&mut program, &u, cap);
            }
            let key = QuantityKey {
                family: Family::Generation,
                index: g,
                t,
            };
            chance(&mut program, config, key, u, gen.u_min, gen.u_max)?;
        }
        for tau in 1..horizon {
            let key = QuantityKey {
                family: Family::Ramp,
                index: g,
                t: tau,
            };
            let du = ramp_form(&layout.policy, g, &layout.germ, tau);
            chance(&mut program, config, key, du, gen.ramp_min, gen.ramp_max)?;
        }
    }

    add_storage_constraints(&mut program, case, &layout)?;

    for t in 0..horizon {
        let nodal = layout.nodal_forms(t);
        for (l, line) in case.lines.iter().enumerate() {
            let key = QuantityKey {
                family: Family::LineFlow,
                index: l,
                t,
            };
            let c = line_flow_form(&layout.ptdf, l, &nodal);
            chance(&mut program, config, key, c, line.c_min, line.c_max)?;
        }
    }

    Ok(Problem { program, layout })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn lambda_values() {
        assert_abs_diff_eq!(lambda_of_epsilon(0.05).unwrap(), 1.6449, epsilon = 1e-4);
        assert_eq!(lambda_of_epsilon(0.5).unwrap(), 0.0);
        assert_abs_diff_eq!(lambda_of_epsilon(0.025).unwrap(), 1.9600, epsilon = 1e-4);
        assert!(lambda_of_epsilon(0.0).is_err());
        assert!(lambda_of_epsilon(0.7).is_err());
    }

    proptest! {
        #[test]
        fn lambda_inverts_cdf(eps in 1e-6f64..0.5) {
            let l = lambda_of_epsilon(eps).unwrap();
            prop_assert!((Normal::standard().cdf(l) - (1.0 - eps)).abs() <= 1e-10);
        }
    }

    fn unit_form(p: &mut ConicProgram, mean: f64, sigma: f64) -> (AffineForm, Vec<f64>) {
        let m = p.add_var(VarLabel::Auxiliary { index: 0 });
        let a = p.add_var(VarLabel::Auxiliary { index: 1 });
        let mut f = AffineForm::from_mean(LinExpr::var(m));
        f.add_coeff_term(0, a, 1.0);
        (f, vec![mean, sigma])
    }

    #[test]
    fn deterministic_chance_constraint_is_linear() {
        let mut p = ConicProgram::new();
        add_chance_constraint(&mut p, &AffineForm::constant(1.0), 0.0, 2.0, 0.05).unwrap();
        assert!(p.socs.is_empty() && p.inequalities.is_empty() && p.conflicts.is_empty());
        add_chance_constraint(&mut p, &AffineForm::constant(3.0), 0.0, 2.0, 0.05).unwrap();
        assert_eq!(p.conflicts.len(), 1);
    }

    #[test]
    fn chance_constraint_margin() {
        let mut p = ConicProgram::new();
        let (f, x) = unit_form(&mut p, 0.0, 1.0);
        add_chance_constraint(&mut p, &f, f64::NEG_INFINITY, 2.0, 0.05).unwrap();
        assert_eq!(p.socs.len(), 1);
        // The auxiliary standard deviation sits at its tight value ‖a‖ = 1.
        let mut x = x;
        x.push(1.0);
        assert!(p.check(&x) <= 0.0);

        let mut p = ConicProgram::new();
        let (f, mut x) = unit_form(&mut p, 0.0, 1.0);
        add_chance_constraint(&mut p, &f, f64::NEG_INFINITY, 1.0, 0.05).unwrap();
        x.push(1.0);
        assert!(p.check(&x) > 0.0);
    }

    #[test]
    fn std_cap() {
        let mut p = ConicProgram::new();
        add_std_cap(&mut p, &AffineForm::zero(), 0.01);
        assert!(p.conflicts.is_empty() && p.socs.is_empty());
        let mut fixed = AffineForm::zero();
        fixed.add_coeff_constant(0, 0.02);
        add_std_cap(&mut p, &fixed, 0.01);
        assert_eq!(p.conflicts.len(), 1);
    }

    #[test]
    fn objective_pieces() {
        let mut p = ConicProgram::new();
        add_objective(&mut p, 0, 0, &AffineForm::constant(1.0), (0.01, 0.3, 0.2));
        // Epigraph at its tight value E[u]² = 1.
        let x = vec![1.0];
        assert!(p.check(&x) <= 1e-12);
        assert_abs_diff_eq!(p.objective_value(&x), 0.51, epsilon = 1e-12);

        let mut f = AffineForm::constant(1.0);
        f.add_coeff_constant(0, 0.5);
        let mut p = ConicProgram::new();
        add_objective(&mut p, 0, 0, &f, (0.01, 0.3, 0.2));
        let x = vec![1.0, 0.25];
        assert!(p.check(&x) <= 1e-12);
        assert_abs_diff_eq!(p.objective_value(&x), 0.5125, epsilon = 1e-12);

        let mut p = ConicProgram::new();
        for t in 0..3 {
            add_objective(&mut p, 0, t, &AffineForm::constant(0.0), (0.01, 0.3, 0.2));
        }
        assert_abs_diff_eq!(p.objective_value(&[0.0; 3]), 0.6, epsilon = 1e-12);
    }

    #[test]
    fn config_validation() {
        let mut c = ScenarioConfig::new(Scenario::S2, 24);
        assert!(c.validate().is_ok());
        c.epsilon = 0.0;
        assert!(c.validate().is_err());
        c.epsilon = 0.2;
        assert!(c.validate().is_err());
        let mut c = ScenarioConfig::new(Scenario::S3, 24);
        assert_eq!(c.variance_cap, Some(0.01));
        c.variance_cap = Some(0.0);
        assert!(c.validate().is_err());
    }
}
