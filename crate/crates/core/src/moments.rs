//! Random quantities as affine functions of the Gaussian germ.
//!
//! Every quantity `x(t)` of the dispatch problem is written as
//! `x = μ + Σ_c a_c·Ξ_c`, where `μ` and each coefficient `a_c` are affine in the
//! decision variables. Means and variances follow directly: `E[x] = μ`,
//! `Var x = Σ_c a_c²`.
//!
//! Time indices are 0-based throughout: `t = 0` is the first period. Storage
//! states are indexed by the number of completed steps, so state `0` is the
//! initial condition and state `T` follows the last injection.

use crate::expr::{LinExpr, VarAllocator, VarId, VarLabel};
use crate::forecast::Forecast;
use crate::netcase::Ptdf;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Balancing {
    /// One response matrix per device and disturbance.
    Local,
    /// One response matrix per device, shared by all disturbances.
    Global,
}

impl fmt::Display for Balancing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Balancing::Local => "local",
            Balancing::Global => "global",
        })
    }
}

impl std::str::FromStr for Balancing {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "local" => Ok(Balancing::Local),
            "global" => Ok(Balancing::Global),
            other => Err(format!("unknown balancing mode `{other}` (expected local|global)")),
        }
    }
}

/// Number of free policy scalars.
///
/// Local: `(N_u+N_s)(T + N_d·T(T+1)/2)`; global: `(N_u+N_s)(T + T(T+1)/2)`.
/// Without disturbances only the nominal schedules remain.
pub fn count_decision_vars(mode: Balancing, n_u: usize, n_s: usize, n_d: usize, t: usize) -> usize {
    let tri = t * (t + 1) / 2;
    let blocks = match mode {
        Balancing::Local => n_d,
        Balancing::Global => n_d.min(1),
    };
    (n_u + n_s) * (t + blocks * tri)
}

// ---------------------------------------------------------------------------
// Germ

/// Dense coordinates of the germ: disturbance `j` at time `k` maps to
/// `j·T + k`; storages with uncertain initial energy get one extra coordinate
/// each, after all disturbance coordinates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GermIndex {
    n_dist: usize,
    horizon: usize,
    initial_state: Vec<Option<usize>>,
}

impl GermIndex {
    /// `uncertain_initial[s]` tells whether storage `s` has `Var(e_ic) > 0`.
    pub fn new(n_dist: usize, horizon: usize, uncertain_initial: &[bool]) -> Self {
        let mut next = n_dist * horizon;
        let initial_state = uncertain_initial
            .iter()
            .map(|&u| {
                u.then(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect();
        Self {
            n_dist,
            horizon,
            initial_state,
        }
    }

    pub fn n_dist(&self) -> usize {
        self.n_dist
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.n_dist * self.horizon + self.initial_state.iter().flatten().count()
    }

    pub fn coord(&self, j: usize, k: usize) -> usize {
        debug_assert!(j < self.n_dist && k < self.horizon);
        j * self.horizon + k
    }

    /// Inverse of [`GermIndex::coord`]; `None` for initial-state coordinates.
    pub fn decode(&self, c: usize) -> Option<(usize, usize)> {
        (c < self.n_dist * self.horizon).then(|| (c / self.horizon, c % self.horizon))
    }

    pub fn initial_state_coord(&self, storage: usize) -> Option<usize> {
        self.initial_state.get(storage).copied().flatten()
    }
}

// ---------------------------------------------------------------------------
// Policies

/// Packed lower-triangular matrix of variables; entries above the diagonal
/// are structurally zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LowerTri {
    n: usize,
    entries: Vec<VarId>,
}

impl LowerTri {
    fn allocate<A: VarAllocator>(alloc: &mut A, n: usize, device: usize, block: usize) -> Self {
        let mut entries = Vec::with_capacity(n * (n + 1) / 2);
        for t in 0..n {
            for k in 0..=t {
                entries.push(alloc.alloc(VarLabel::Response {
                    device,
                    block,
                    t,
                    k,
                }));
            }
        }
        Self { n, entries }
    }

    pub fn get(&self, t: usize, k: usize) -> Option<VarId> {
        (k <= t && t < self.n).then(|| self.entries[t * (t + 1) / 2 + k])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Decision variables of the affine policies. Devices are numbered generators
/// first, then storages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyVars {
    mode: Balancing,
    horizon: usize,
    n_gen: usize,
    n_sto: usize,
    n_dist: usize,
    nominal: Vec<Vec<VarId>>,
    response: Vec<Vec<LowerTri>>,
}

impl PolicyVars {
    pub fn allocate<A: VarAllocator>(
        alloc: &mut A,
        mode: Balancing,
        n_gen: usize,
        n_sto: usize,
        n_dist: usize,
        horizon: usize,
    ) -> Self {
        let n_dev = n_gen + n_sto;
        let blocks = match mode {
            Balancing::Local => n_dist,
            Balancing::Global => n_dist.min(1),
        };
        let nominal = (0..n_dev)
            .map(|device| {
                (0..horizon)
                    .map(|t| alloc.alloc(VarLabel::Nominal { device, t }))
                    .collect()
            })
            .collect();
        let response = (0..n_dev)
            .map(|device| {
                (0..blocks)
                    .map(|block| LowerTri::allocate(alloc, horizon, device, block))
                    .collect()
            })
            .collect();
        Self {
            mode,
            horizon,
            n_gen,
            n_sto,
            n_dist,
            nominal,
            response,
        }
    }

    pub fn mode(&self) -> Balancing {
        self.mode
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n_gen(&self) -> usize {
        self.n_gen
    }

    pub fn n_sto(&self) -> usize {
        self.n_sto
    }

    pub fn n_dist(&self) -> usize {
        self.n_dist
    }

    pub fn n_devices(&self) -> usize {
        self.n_gen + self.n_sto
    }

    pub fn generator(&self, g: usize) -> usize {
        debug_assert!(g < self.n_gen);
        g
    }

    pub fn storage(&self, s: usize) -> usize {
        debug_assert!(s < self.n_sto);
        self.n_gen + s
    }

    pub fn n_blocks(&self) -> usize {
        self.response.first().map_or(0, |r| r.len())
    }

    /// Response block used for disturbance `j`.
    pub fn block_of(&self, j: usize) -> usize {
        match self.mode {
            Balancing::Local => j,
            Balancing::Global => 0,
        }
    }

    pub fn nominal(&self, device: usize, t: usize) -> VarId {
        self.nominal[device][t]
    }

    /// `[G_{device,j}]_{tk}`; `None` above the diagonal.
    pub fn response(&self, device: usize, j: usize, t: usize, k: usize) -> Option<VarId> {
        self.response[device][self.block_of(j)].get(t, k)
    }

    pub fn response_block(&self, device: usize, block: usize) -> &LowerTri {
        &self.response[device][block]
    }

    /// Free scalars actually created.
    pub fn free_scalars(&self) -> usize {
        self.nominal.iter().map(Vec::len).sum::<usize>()
            + self
                .response
                .iter()
                .flat_map(|r| r.iter().map(LowerTri::len))
                .sum::<usize>()
    }

    /// Every policy variable, in allocation order.
    pub fn all_vars(&self) -> Vec<VarId> {
        let mut v: Vec<VarId> = self.nominal.iter().flatten().copied().collect();
        for blocks in &self.response {
            for b in blocks {
                v.extend_from_slice(&b.entries);
            }
        }
        v.sort();
        v
    }
}

// ---------------------------------------------------------------------------
// Affine forms

/// `μ + Σ_c a_c·Ξ_c` with `μ`, `a_c` affine in the decision variables.
/// Coefficients are stored sparsely; structurally zero ones are absent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AffineForm {
    pub mean: LinExpr,
    coeffs: BTreeMap<usize, LinExpr>,
}

impl AffineForm {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self {
            mean: LinExpr::constant(c),
            coeffs: BTreeMap::new(),
        }
    }

    pub fn from_mean(mean: LinExpr) -> Self {
        Self {
            mean,
            coeffs: BTreeMap::new(),
        }
    }

    pub fn coeffs(&self) -> impl Iterator<Item = (usize, &LinExpr)> {
        self.coeffs.iter().map(|(&c, e)| (c, e))
    }

    pub fn coeff(&self, coord: usize) -> Option<&LinExpr> {
        self.coeffs.get(&coord)
    }

    pub fn n_coeffs(&self) -> usize {
        self.coeffs.len()
    }

    /// `a_coord += scale·e`
    pub fn add_coeff(&mut self, coord: usize, e: &LinExpr, scale: f64) {
        if scale == 0.0 || e.is_zero() {
            return;
        }
        let slot = self.coeffs.entry(coord).or_default();
        slot.add_scaled(e, scale);
        if slot.is_zero() {
            self.coeffs.remove(&coord);
        }
    }

    pub fn add_coeff_term(&mut self, coord: usize, v: VarId, coef: f64) {
        self.add_coeff(coord, &LinExpr::term(v, coef), 1.0);
    }

    pub fn add_coeff_constant(&mut self, coord: usize, c: f64) {
        self.add_coeff(coord, &LinExpr::constant(c), 1.0);
    }

    /// `self += scale·other`
    pub fn add_scaled(&mut self, other: &AffineForm, scale: f64) {
        if scale == 0.0 {
            return;
        }
        self.mean.add_scaled(&other.mean, scale);
        for (&c, e) in &other.coeffs {
            self.add_coeff(c, e, scale);
        }
    }

    /// Applies `f` to the mean and every coefficient.
    pub fn map_exprs(&self, mut f: impl FnMut(&LinExpr) -> LinExpr) -> AffineForm {
        AffineForm {
            mean: f(&self.mean),
            coeffs: self.coeffs.iter().map(|(&c, e)| (c, f(e))).collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> AffineForm {
        let mut out = AffineForm::zero();
        out.add_scaled(self, s);
        out
    }

    /// No coefficient depends on a variable and all are zero.
    pub fn is_deterministic(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// All coefficients are constants (possibly nonzero).
    pub fn has_constant_coeffs(&self) -> bool {
        self.coeffs.values().all(LinExpr::is_constant)
    }

    pub fn mean_value(&self, x: &[f64]) -> f64 {
        self.mean.eval(x)
    }

    pub fn coeff_values(&self, x: &[f64]) -> Vec<(usize, f64)> {
        self.coeffs.iter().map(|(&c, e)| (c, e.eval(x))).collect()
    }

    pub fn variance(&self, x: &[f64]) -> f64 {
        self.coeffs.values().map(|e| e.eval(x).powi(2)).sum()
    }

    pub fn std_dev(&self, x: &[f64]) -> f64 {
        self.variance(x).sqrt()
    }

    /// Value for decision variables `x` and germ realization `xi`.
    pub fn realize(&self, x: &[f64], xi: &[f64]) -> f64 {
        self.coeffs
            .iter()
            .fold(self.mean.eval(x), |acc, (&c, e)| acc + e.eval(x) * xi[c])
    }

    pub fn max_coord(&self) -> Option<usize> {
        self.coeffs.keys().next_back().copied()
    }
}

impl std::ops::Add for &AffineForm {
    type Output = AffineForm;
    fn add(self, rhs: &AffineForm) -> AffineForm {
        let mut out = self.clone();
        out.add_scaled(rhs, 1.0);
        out
    }
}

impl std::ops::Sub for &AffineForm {
    type Output = AffineForm;
    fn sub(self, rhs: &AffineForm) -> AffineForm {
        let mut out = self.clone();
        out.add_scaled(rhs, -1.0);
        out
    }
}

// ---------------------------------------------------------------------------
// Quantities

/// `d_j(t) = d̂_j[t] + Σ_{k≤t} L_j[t,k]·Ξ_{j,k}`
pub fn disturbance_form(forecast: &Forecast, j: usize, germ: &GermIndex, t: usize) -> AffineForm {
    let mut f = AffineForm::constant(forecast.mean[t]);
    for k in 0..=t {
        let l = forecast.factor[(t, k)];
        if l != 0.0 {
            f.add_coeff_constant(germ.coord(j, k), l);
        }
    }
    f
}

fn device_form(policy: &PolicyVars, device: usize, germ: &GermIndex, t: usize) -> AffineForm {
    let mut f = AffineForm::from_mean(LinExpr::var(policy.nominal(device, t)));
    for j in 0..policy.n_dist() {
        for k in 0..=t {
            if let Some(v) = policy.response(device, j, t, k) {
                f.add_coeff_term(germ.coord(j, k), v, 1.0);
            }
        }
    }
    f
}

/// `u_g(t) = û_g[t] + Σ_j Σ_{k≤t} G_{g,j}[t,k]·Ξ_{j,k}`
pub fn generation_form(policy: &PolicyVars, g: usize, germ: &GermIndex, t: usize) -> AffineForm {
    device_form(policy, policy.generator(g), germ, t)
}

/// `s_s(t) = ŝ_s[t] + Σ_j Σ_{k≤t} S_{s,j}[t,k]·Ξ_{j,k}`
pub fn storage_injection_form(
    policy: &PolicyVars,
    s: usize,
    germ: &GermIndex,
    t: usize,
) -> AffineForm {
    device_form(policy, policy.storage(s), germ, t)
}

/// Stored energy after `steps` injections:
/// `e = e_ic − h Σ_{k<steps} ŝ[k] − h Σ_j Σ_k (Σ_{l=k}^{steps−1} S_j[l,k]) Ξ_{j,k}`.
///
/// The initial energy contributes `√Var(e_ic)` on its own germ coordinate.
pub fn storage_state_form(
    policy: &PolicyVars,
    s: usize,
    e_ic: (f64, f64),
    h: f64,
    germ: &GermIndex,
    steps: usize,
) -> AffineForm {
    let device = policy.storage(s);
    let mut mean = LinExpr::constant(e_ic.0);
    for k in 0..steps {
        mean.add_term(policy.nominal(device, k), -h);
    }
    let mut f = AffineForm::from_mean(mean);
    for j in 0..policy.n_dist() {
        for k in 0..steps {
            let terms = (k..steps).filter_map(|l| policy.response(device, j, l, k).map(|v| (v, -h)));
            f.add_coeff(germ.coord(j, k), &LinExpr::from_terms(terms, 0.0), 1.0);
        }
    }
    if e_ic.1 > 0.0 {
        if let Some(c) = germ.initial_state_coord(s) {
            f.add_coeff_constant(c, e_ic.1.sqrt());
        }
    }
    f
}

/// `Δu_g(τ) = u_g(τ) − u_g(τ−1)` for `τ ≥ 1`: coefficient `G[τ,τ]` on `(j,τ)`
/// and `G[τ,k] − G[τ−1,k]` on `(j,k)`, `k < τ`.
pub fn ramp_form(policy: &PolicyVars, g: usize, germ: &GermIndex, tau: usize) -> AffineForm {
    assert!(tau >= 1, "ramp is defined from the second period on");
    let device = policy.generator(g);
    let mut mean = LinExpr::var(policy.nominal(device, tau));
    mean.add_term(policy.nominal(device, tau - 1), -1.0);
    let mut f = AffineForm::from_mean(mean);
    for j in 0..policy.n_dist() {
        for k in 0..=tau {
            let mut e = LinExpr::zero();
            if let Some(v) = policy.response(device, j, tau, k) {
                e.add_term(v, 1.0);
            }
            if let Some(v) = policy.response(device, j, tau - 1, k) {
                e.add_term(v, -1.0);
            }
            f.add_coeff(germ.coord(j, k), &e, 1.0);
        }
    }
    f
}

/// What sits at one bus; indices refer to generator/storage/disturbance lists.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BusDevices {
    pub generator: Option<usize>,
    pub storage: Option<usize>,
    pub disturbances: Vec<usize>,
    /// Mean of the certain load at the bus, per period.
    pub load: Option<Vec<f64>>,
}

/// `p_i(t) = d_i(t) + u_i(t) + s_i(t)`; absent devices contribute zero.
pub fn net_power_form(
    devices: &BusDevices,
    policy: &PolicyVars,
    forecasts: &[&Forecast],
    germ: &GermIndex,
    t: usize,
) -> AffineForm {
    let mut p = AffineForm::zero();
    for &j in &devices.disturbances {
        p.add_scaled(&disturbance_form(forecasts[j], j, germ, t), 1.0);
    }
    if let Some(load) = &devices.load {
        p.mean.add_constant(load[t]);
    }
    if let Some(g) = devices.generator {
        p.add_scaled(&generation_form(policy, g, germ, t), 1.0);
    }
    if let Some(s) = devices.storage {
        if s < policy.n_sto() {
            p.add_scaled(&storage_injection_form(policy, s, germ, t), 1.0);
        }
    }
    p
}

/// `c_l(t) = Σ_i Φ[l,i]·p_i(t)` given the nodal forms at one period.
pub fn line_flow_form(ptdf: &Ptdf, line: usize, nodal: &[AffineForm]) -> AffineForm {
    let mut c = AffineForm::zero();
    for (i, p) in nodal.iter().enumerate() {
        let phi = ptdf.get(line, i);
        if phi != 0.0 {
            c.add_scaled(p, phi);
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::VarRegistry;
    use crate::forecast::{artificial_forecast, reference_factor, FactorSource};
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    fn policy(mode: Balancing, n_gen: usize, n_sto: usize, n_dist: usize, t: usize) -> (PolicyVars, usize) {
        let mut reg = VarRegistry::new();
        let p = PolicyVars::allocate(&mut reg, mode, n_gen, n_sto, n_dist, t);
        (p, reg.len())
    }

    #[test]
    fn counts() {
        assert_eq!(count_decision_vars(Balancing::Local, 2, 1, 1, 24), 972);
        assert_eq!(count_decision_vars(Balancing::Global, 2, 1, 1, 24), 972);
        assert_eq!(count_decision_vars(Balancing::Local, 10, 5, 7, 12), 8370);
        assert_eq!(count_decision_vars(Balancing::Local, 2, 0, 1, 24), 648);
    }

    #[test]
    fn germ_layout() {
        let g = GermIndex::new(2, 3, &[false, true]);
        assert_eq!(g.dim(), 7);
        assert_eq!(g.coord(1, 0), 3);
        assert_eq!(g.decode(5), Some((1, 2)));
        assert_eq!(g.initial_state_coord(1), Some(6));
        assert_eq!(g.initial_state_coord(0), None);
        assert_eq!(g.decode(6), None);
    }

    #[test]
    fn disturbance_rows() {
        let germ = GermIndex::new(1, 2, &[]);
        let det = Forecast::deterministic(DVector::from_vec(vec![-1.0, -2.0]));
        let f = disturbance_form(&det, 0, &germ, 1);
        assert!(f.is_deterministic());
        assert_eq!(f.mean_value(&[]), -2.0);

        let l = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 2.0, 3.0]);
        let fc = Forecast::new(DVector::zeros(2), l).unwrap();
        let f = disturbance_form(&fc, 0, &germ, 1);
        assert_eq!(f.coeff_values(&[]), vec![(0, 2.0), (1, 3.0)]);
    }

    #[test]
    fn reference_factor_variance() {
        let germ = GermIndex::new(1, 12, &[]);
        let fc = artificial_forecast(1.0, 12, &FactorSource::Matrix(reference_factor())).unwrap();
        let v = disturbance_form(&fc, 0, &germ, 2).variance(&[]);
        assert_abs_diff_eq!(v, (292f64.powi(2) + 60f64.powi(2) + 49.0) * 1e-8, epsilon = 1e-15);
    }

    #[test]
    fn generation_moments() {
        let (p, n) = policy(Balancing::Local, 1, 0, 2, 2);
        let germ = GermIndex::new(2, 2, &[]);
        let mut x = vec![0.0; n];
        let f = generation_form(&p, 0, &germ, 0);
        assert_eq!(f.variance(&x), 0.0);

        x[p.nominal(0, 0).0] = 1.0;
        x[p.response(0, 0, 0, 0).unwrap().0] = 0.5;
        assert_eq!(f.mean_value(&x), 1.0);
        assert_eq!(f.variance(&x), 0.25);

        x[p.response(0, 0, 1, 0).unwrap().0] = 0.3;
        x[p.response(0, 1, 1, 0).unwrap().0] = 0.4;
        let f2 = generation_form(&p, 0, &germ, 1);
        assert_abs_diff_eq!(f2.variance(&x), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn storage_state() {
        let (p, n) = policy(Balancing::Local, 0, 1, 1, 2);
        let germ = GermIndex::new(1, 2, &[false]);
        let mut x = vec![0.0; n];
        x[p.nominal(0, 0).0] = 0.5;
        x[p.nominal(0, 1).0] = 0.5;
        let e = storage_state_form(&p, 0, (2.0, 0.0), 1.0, &germ, 2);
        assert_eq!(e.mean_value(&x), 1.0);
        assert_eq!(e.variance(&x), 0.0);

        x[p.response(0, 0, 0, 0).unwrap().0] = 0.3;
        assert_abs_diff_eq!(e.variance(&x), 0.09, epsilon = 1e-15);

        let germ = GermIndex::new(1, 2, &[true]);
        let e0 = storage_state_form(&p, 0, (2.0, 0.04), 1.0, &germ, 0);
        assert_abs_diff_eq!(e0.variance(&x), 0.04, epsilon = 1e-15);
    }

    #[test]
    fn ramp() {
        let (p, n) = policy(Balancing::Local, 1, 0, 1, 2);
        let germ = GermIndex::new(1, 2, &[]);
        let mut x = vec![0.0; n];
        x[p.nominal(0, 0).0] = 1.0;
        x[p.nominal(0, 1).0] = 1.0;
        let r = ramp_form(&p, 0, &germ, 1);
        assert_eq!(r.mean_value(&x), 0.0);
        assert_eq!(r.variance(&x), 0.0);

        x[p.response(0, 0, 1, 1).unwrap().0] = 0.4;
        assert_abs_diff_eq!(r.variance(&x), 0.16, epsilon = 1e-15);

        x[p.response(0, 0, 1, 1).unwrap().0] = 0.0;
        x[p.response(0, 0, 1, 0).unwrap().0] = 0.3;
        x[p.response(0, 0, 0, 0).unwrap().0] = 0.1;
        let vals = r.coeff_values(&x);
        assert_abs_diff_eq!(vals[0].1, 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(r.variance(&x), 0.04, epsilon = 1e-15);
    }

    #[test]
    fn global_blocks_are_shared() {
        let (p, n) = policy(Balancing::Global, 1, 1, 3, 4);
        assert_eq!(p.response(0, 0, 2, 1), p.response(0, 2, 2, 1));
        assert_eq!(p.response(1, 0, 3, 0), p.response(1, 1, 3, 0));
        assert_eq!(n, count_decision_vars(Balancing::Global, 1, 1, 3, 4));
        assert_eq!(p.response(0, 0, 1, 2), None);
    }

    #[test]
    fn net_power_and_flow() {
        let (p, n) = policy(Balancing::Local, 1, 0, 0, 1);
        let germ = GermIndex::new(0, 1, &[]);
        let mut x = vec![0.0; n];
        x[p.nominal(0, 0).0] = 1.0;
        let bus = BusDevices {
            generator: Some(0),
            load: Some(vec![-1.0]),
            ..Default::default()
        };
        assert_eq!(net_power_form(&bus, &p, &[], &germ, 0).mean_value(&x), 0.0);
        let empty = net_power_form(&BusDevices::default(), &p, &[], &germ, 0);
        assert!(empty.mean.is_zero() && empty.is_deterministic());
    }

    #[test]
    fn flow_variance_without_recourse() {
        let ptdf = Ptdf {
            matrix: DMatrix::from_row_slice(1, 2, &[0.7, 0.0]),
            reference: 1,
        };
        let germ = GermIndex::new(1, 1, &[]);
        let fc = Forecast::new(DVector::from_vec(vec![0.0]), DMatrix::from_element(1, 1, 0.2)).unwrap();
        let d = disturbance_form(&fc, 0, &germ, 0);
        let c = line_flow_form(&ptdf, 0, &[d, AffineForm::zero()]);
        assert_abs_diff_eq!(c.variance(&[]), 0.49 * 0.04, epsilon = 1e-15);

        let ptdf = Ptdf {
            matrix: DMatrix::from_row_slice(1, 2, &[0.5, -0.5]),
            reference: 1,
        };
        let c = line_flow_form(&ptdf, 0, &[AffineForm::constant(1.0), AffineForm::constant(-1.0)]);
        assert_eq!(c.mean_value(&[]), 1.0);
        let z = line_flow_form(&ptdf, 0, &[AffineForm::zero(), AffineForm::zero()]);
        assert!(z.mean.is_zero() && z.is_deterministic());
    }

    fn form_strategy() -> impl Strategy<Value = AffineForm> {
        (
            -3.0f64..3.0,
            prop::collection::vec((0usize..6, 0usize..4, -2.0f64..2.0), 0..8),
        )
            .prop_map(|(m, cs)| {
                let mut f = AffineForm::constant(m);
                for (c, v, a) in cs {
                    f.add_coeff_term(c, VarId(v), a);
                }
                f
            })
    }

    proptest! {
        #[test]
        fn forms_add_linearly(a in form_strategy(), b in form_strategy(),
                              x in prop::collection::vec(-1.0f64..1.0, 4)) {
            let s = &a + &b;
            prop_assert!((s.mean_value(&x) - a.mean_value(&x) - b.mean_value(&x)).abs() < 1e-12);
            for c in 0..6 {
                let get = |f: &AffineForm| f.coeff(c).map_or(0.0, |e| e.eval(&x));
                prop_assert!((get(&s) - get(&a) - get(&b)).abs() < 1e-12);
            }
        }

        #[test]
        fn forms_are_causal(t in 1usize..6, n_dist in 1usize..3, tau_frac in 0.0f64..1.0) {
            let (p, _) = policy(Balancing::Local, 1, 1, n_dist, t);
            let germ = GermIndex::new(n_dist, t, &[false]);
            let tau = ((t - 1) as f64 * tau_frac) as usize;
            let check = |f: &AffineForm, limit: usize| {
                f.coeffs().all(|(c, _)| germ.decode(c).is_none_or(|(_, k)| k <= limit))
            };
            prop_assert!(check(&generation_form(&p, 0, &germ, tau), tau));
            prop_assert!(check(&storage_injection_form(&p, 0, &germ, tau), tau));
            prop_assert!(check(&storage_state_form(&p, 0, (1.0, 0.0), 1.0, &germ, tau + 1), tau));
            if tau >= 1 {
                prop_assert!(check(&ramp_form(&p, 0, &germ, tau), tau));
            }
        }

        #[test]
        fn policy_scalar_count_matches(mode in prop_oneof![Just(Balancing::Local), Just(Balancing::Global)],
                                       n_u in prop::sample::select(vec![1usize, 2, 5, 7, 10]),
                                       n_s in prop::sample::select(vec![1usize, 2, 5, 7, 10]),
                                       n_d in prop::sample::select(vec![1usize, 2, 5, 7, 10]),
                                       t in prop::sample::select(vec![4usize, 12, 24])) {
            let (p, n) = policy(mode, n_u, n_s, n_d, t);
            prop_assert_eq!(n, count_decision_vars(mode, n_u, n_s, n_d, t));
            prop_assert_eq!(p.free_scalars(), n);
        }
    }
}
