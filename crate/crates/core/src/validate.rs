//! Monte Carlo checks of solved policies.
//!
//! Germ draws come from ChaCha8 seeded with the run seed; sample `i` uses
//! stream `i` of that generator, so a sample's values depend only on
//! `(seed, i)` and not on batch size or evaluation order.
//!
//! Realized quantities are computed from the numeric policies directly, and
//! analytic moments from closed-form sums of squared policy entries; neither
//! path goes through [`crate::moments::AffineForm`].

use crate::netcase::GridCase;
use crate::socp::{ChanceRecord, Family, Layout};
use crate::solve::PolicySolution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use std::collections::BTreeMap;
use std::fmt;

/// A bound counts as violated only beyond this (scaled) margin, so quantities
/// that sit exactly on a deterministic bound are not counted.
pub const VIOLATION_TOLERANCE: f64 = 1e-7;

/// `n × dim` standard normal draws, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub n: usize,
    pub seed: u64,
    pub dim: usize,
    pub draws: Vec<f64>,
}

impl SampleBatch {
    pub fn sample(&self, i: usize) -> &[f64] {
        &self.draws[i * self.dim..(i + 1) * self.dim]
    }
}

/// Draws of sample `index` for `seed`.
pub fn germ_sample(seed: u64, index: u64, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
}

pub fn sample_germ(n: usize, seed: u64, dim: usize) -> SampleBatch {
    let mut draws = Vec::with_capacity(n * dim);
    for i in 0..n {
        draws.extend(germ_sample(seed, i as u64, dim));
    }
    SampleBatch { n, seed, dim, draws }
}

// ---------------------------------------------------------------------------
// Quantities

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    /// Disturbance `d`.
    D,
    /// Generation `u`.
    U,
    /// Storage injection `s`.
    S,
    /// Storage energy `e`, indexed by completed steps.
    E,
    /// Generation ramp `Δu`.
    Du,
    /// Line flow `c`.
    C,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Quantity {
    pub kind: Kind,
    pub index: usize,
    pub t: usize,
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.kind {
            Kind::D => "d",
            Kind::U => "u",
            Kind::S => "s",
            Kind::E => "e",
            Kind::Du => "du",
            Kind::C => "c",
        };
        write!(f, "{name}[{}]({})", self.index, self.t)
    }
}

impl Quantity {
    pub fn from_record(r: &ChanceRecord) -> Self {
        let kind = match r.key.family {
            Family::Generation => Kind::U,
            Family::Ramp => Kind::Du,
            Family::LineFlow => Kind::C,
            Family::StorageInjection => Kind::S,
            Family::StorageEnergy | Family::TerminalEnergy => Kind::E,
        };
        Quantity {
            kind,
            index: r.key.index,
            t: r.key.t,
        }
    }
}

/// Realized values, one column per quantity.
#[derive(Debug, Clone, Default)]
pub struct Trajectories {
    pub n: usize,
    columns: BTreeMap<Quantity, Vec<f64>>,
    /// `max |Σ_i p_i(t)|` over samples and periods.
    pub max_balance_residual: f64,
    /// Largest gap between closed-form and stepped storage energy.
    pub max_energy_path_gap: f64,
    /// Largest `|e(T) − e(0) + h Σ_t s(t)|`.
    pub max_telescoping_gap: f64,
}

impl Trajectories {
    pub fn get(&self, q: &Quantity) -> Option<&[f64]> {
        self.columns.get(q).map(Vec::as_slice)
    }

    pub fn quantities(&self) -> impl Iterator<Item = &Quantity> {
        self.columns.keys()
    }

    fn push(&mut self, q: Quantity, v: f64) {
        self.columns.entry(q).or_default().push(v);
    }
}

/// `Σ_j Σ_{k≤t} M_j[t,k]·Ξ_j[k]`
fn response(mats: &[nalgebra::DMatrix<f64>], xi: &[f64], horizon: usize, t: usize) -> f64 {
    let mut acc = 0.0;
    for (j, m) in mats.iter().enumerate() {
        let base = j * horizon;
        for k in 0..=t {
            acc += m[(t, k)] * xi[base + k];
        }
    }
    acc
}

/// Evaluates every quantity on every sample.
pub fn realize(
    policies: &PolicySolution,
    layout: &Layout,
    case: &GridCase,
    batch: &SampleBatch,
) -> Trajectories {
    let horizon = policies.horizon;
    let h = layout.config.h;
    let n_bus = layout.buses.len();
    let mut out = Trajectories {
        n: batch.n,
        ..Default::default()
    };
    let fc = &layout.disturbances;
    let mut d = vec![vec![0.0; horizon]; fc.len()];
    let mut u = vec![vec![0.0; horizon]; policies.n_gen()];
    let mut s = vec![vec![0.0; horizon]; policies.n_sto()];
    let mut p = vec![0.0; n_bus];

    for i in 0..batch.n {
        let xi = batch.sample(i);
        for (j, f) in fc.iter().enumerate() {
            for t in 0..horizon {
                let mut v = f.mean[t];
                for k in 0..=t {
                    v += f.factor[(t, k)] * xi[j * horizon + k];
                }
                d[j][t] = v;
                out.push(Quantity { kind: Kind::D, index: j, t }, v);
            }
        }
        for g in 0..policies.n_gen() {
            let resp = &policies.u_response[g];
            for t in 0..horizon {
                let v = policies.u_nominal[g][t] + response(resp, xi, horizon, t);
                u[g][t] = v;
                out.push(Quantity { kind: Kind::U, index: g, t }, v);
            }
            for tau in 1..horizon {
                let mut v = policies.u_nominal[g][tau] - policies.u_nominal[g][tau - 1];
                for (j, m) in resp.iter().enumerate() {
                    let base = j * horizon;
                    v += m[(tau, tau)] * xi[base + tau];
                    for k in 0..tau {
                        v += (m[(tau, k)] - m[(tau - 1, k)]) * xi[base + k];
                    }
                }
                out.push(Quantity { kind: Kind::Du, index: g, t: tau }, v);
            }
        }
        for st in 0..policies.n_sto() {
            let resp = &policies.s_response[st];
            for t in 0..horizon {
                let v = policies.s_nominal[st][t] + response(resp, xi, horizon, t);
                s[st][t] = v;
                out.push(Quantity { kind: Kind::S, index: st, t }, v);
            }
            let sto = &case.storages[st];
            let e0 = sto.e_ic_mean
                + layout
                    .germ
                    .initial_state_coord(st)
                    .map_or(0.0, |c| sto.e_ic_var.sqrt() * xi[c]);
            let mut stepped = e0;
            for steps in 0..=horizon {
                // closed form
                let mut e = e0;
                for k in 0..steps {
                    e -= h * policies.s_nominal[st][k];
                }
                for (j, m) in resp.iter().enumerate() {
                    for k in 0..steps {
                        let col: f64 = (k..steps).map(|l| m[(l, k)]).sum();
                        e -= h * col * xi[j * horizon + k];
                    }
                }
                if steps > 0 {
                    stepped -= h * s[st][steps - 1];
                }
                out.max_energy_path_gap = out.max_energy_path_gap.max((e - stepped).abs());
                out.push(Quantity { kind: Kind::E, index: st, t: steps }, e);
            }
            let total: f64 = s[st].iter().sum();
            out.max_telescoping_gap = out.max_telescoping_gap.max((stepped - e0 + h * total).abs());
        }
        for t in 0..horizon {
            for (b, dev) in layout.buses.iter().enumerate() {
                let mut v = dev.load.as_ref().map_or(0.0, |l| l[t]);
                for &j in &dev.disturbances {
                    v += d[j][t];
                }
                if let Some(g) = dev.generator {
                    v += u[g][t];
                }
                if let Some(st) = dev.storage {
                    if st < s.len() {
                        v += s[st][t];
                    }
                }
                p[b] = v;
            }
            let total: f64 = p.iter().sum();
            out.max_balance_residual = out.max_balance_residual.max(total.abs());
            for l in 0..layout.ptdf.n_lines() {
                let v: f64 = (0..n_bus).map(|b| layout.ptdf.get(l, b) * p[b]).sum();
                out.push(Quantity { kind: Kind::C, index: l, t }, v);
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Analytic moments

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
}

/// Means and variances of every quantity from the closed-form sums.
pub fn analytic_moments(
    policies: &PolicySolution,
    layout: &Layout,
    case: &GridCase,
) -> BTreeMap<Quantity, Moments> {
    let horizon = policies.horizon;
    let h = layout.config.h;
    let n_dist = layout.disturbances.len();
    let mut out = BTreeMap::new();

    // Per-bus germ coefficients of net power at t: coeff[bus][j][k].
    let mut nodal_mean = vec![vec![0.0; horizon]; layout.buses.len()];
    let mut nodal_coef = vec![vec![vec![vec![0.0; horizon]; n_dist]; horizon]; layout.buses.len()];

    for (j, f) in layout.disturbances.iter().enumerate() {
        for t in 0..horizon {
            let var: f64 = (0..=t).map(|k| f.factor[(t, k)].powi(2)).sum();
            out.insert(
                Quantity { kind: Kind::D, index: j, t },
                Moments { mean: f.mean[t], variance: var },
            );
        }
    }
    let var_of = |mats: &[nalgebra::DMatrix<f64>], t: usize| -> f64 {
        mats.iter()
            .map(|m| (0..=t).map(|k| m[(t, k)].powi(2)).sum::<f64>())
            .sum()
    };
    for g in 0..policies.n_gen() {
        let r = &policies.u_response[g];
        for t in 0..horizon {
            out.insert(
                Quantity { kind: Kind::U, index: g, t },
                Moments {
                    mean: policies.u_nominal[g][t],
                    variance: var_of(r, t),
                },
            );
        }
        for tau in 1..horizon {
            let var: f64 = r
                .iter()
                .map(|m| {
                    m[(tau, tau)].powi(2)
                        + (0..tau).map(|k| (m[(tau, k)] - m[(tau - 1, k)]).powi(2)).sum::<f64>()
                })
                .sum();
            out.insert(
                Quantity { kind: Kind::Du, index: g, t: tau },
                Moments {
                    mean: policies.u_nominal[g][tau] - policies.u_nominal[g][tau - 1],
                    variance: var,
                },
            );
        }
    }
    for st in 0..policies.n_sto() {
        let r = &policies.s_response[st];
        let sto = &case.storages[st];
        for t in 0..horizon {
            out.insert(
                Quantity { kind: Kind::S, index: st, t },
                Moments {
                    mean: policies.s_nominal[st][t],
                    variance: var_of(r, t),
                },
            );
        }
        let ic_var = if layout.germ.initial_state_coord(st).is_some() {
            sto.e_ic_var
        } else {
            0.0
        };
        for steps in 0..=horizon {
            let mean = sto.e_ic_mean - h * policies.s_nominal[st][..steps].iter().sum::<f64>();
            let var: f64 = r
                .iter()
                .map(|m| {
                    (0..steps)
                        .map(|k| (h * (k..steps).map(|l| m[(l, k)]).sum::<f64>()).powi(2))
                        .sum::<f64>()
                })
                .sum::<f64>()
                + ic_var;
            out.insert(
                Quantity { kind: Kind::E, index: st, t: steps },
                Moments { mean, variance: var },
            );
        }
    }

    for (b, dev) in layout.buses.iter().enumerate() {
        for t in 0..horizon {
            let mut m = dev.load.as_ref().map_or(0.0, |l| l[t]);
            for &j in &dev.disturbances {
                let f = &layout.disturbances[j];
                m += f.mean[t];
                for k in 0..=t {
                    nodal_coef[b][t][j][k] += f.factor[(t, k)];
                }
            }
            let mut add_device = |nominal: &[f64], mats: &[nalgebra::DMatrix<f64>]| {
                m += nominal[t];
                for (j, mat) in mats.iter().enumerate() {
                    for k in 0..=t {
                        nodal_coef[b][t][j][k] += mat[(t, k)];
                    }
                }
            };
            if let Some(g) = dev.generator {
                add_device(&policies.u_nominal[g], &policies.u_response[g]);
            }
            if let Some(st) = dev.storage {
                if st < policies.n_sto() {
                    add_device(&policies.s_nominal[st], &policies.s_response[st]);
                }
            }
            nodal_mean[b][t] = m;
        }
    }
    for l in 0..layout.ptdf.n_lines() {
        for t in 0..horizon {
            let mut mean = 0.0;
            let mut coef = vec![vec![0.0; horizon]; n_dist];
            for b in 0..layout.buses.len() {
                let phi = layout.ptdf.get(l, b);
                if phi == 0.0 {
                    continue;
                }
                mean += phi * nodal_mean[b][t];
                for j in 0..n_dist {
                    for k in 0..=t {
                        coef[j][k] += phi * nodal_coef[b][t][j][k];
                    }
                }
            }
            let var = coef.iter().flatten().map(|c| c * c).sum();
            out.insert(
                Quantity { kind: Kind::C, index: l, t },
                Moments { mean, variance: var },
            );
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Statistics

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleMoments {
    pub n: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
}

pub fn empirical_moments(traj: &Trajectories) -> BTreeMap<Quantity, SampleMoments> {
    traj.columns
        .iter()
        .map(|(q, v)| {
            let n = v.len();
            let mean = v.iter().sum::<f64>() / n.max(1) as f64;
            let variance = if n > 1 {
                v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
            } else {
                0.0
            };
            (*q, SampleMoments { n, mean, variance })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Upper,
    Lower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationCheck {
    pub quantity: String,
    pub side: Side,
    pub bound: f64,
    pub epsilon: f64,
    /// Gaussian probability of violating the bound under the analytic moments.
    pub analytic_prob: f64,
    pub empirical_rate: f64,
    /// Binomial standard error at the nominal risk level.
    pub stderr: f64,
    pub pass: bool,
}

/// One-sided bound to check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bound {
    pub quantity: Quantity,
    pub side: Side,
    pub value: f64,
    pub epsilon: f64,
}

pub fn bounds_from_records(records: &[ChanceRecord]) -> Vec<Bound> {
    let mut out = Vec::new();
    for r in records {
        let quantity = Quantity::from_record(r);
        if r.upper.is_finite() {
            out.push(Bound {
                quantity,
                side: Side::Upper,
                value: r.upper,
                epsilon: r.epsilon,
            });
        }
        if r.lower.is_finite() {
            out.push(Bound {
                quantity,
                side: Side::Lower,
                value: r.lower,
                epsilon: r.epsilon,
            });
        }
    }
    out
}

fn violates(v: f64, b: &Bound) -> bool {
    let margin = VIOLATION_TOLERANCE * b.value.abs().max(1.0);
    match b.side {
        Side::Upper => v > b.value + margin,
        Side::Lower => v < b.value - margin,
    }
}

/// Fraction of samples beyond each bound. `analytic` supplies the Gaussian
/// prediction; bounds on unknown quantities are skipped.
pub fn empirical_violation(
    traj: &Trajectories,
    bounds: &[Bound],
    analytic: &BTreeMap<Quantity, Moments>,
) -> Vec<ViolationCheck> {
    let normal = Normal::standard();
    bounds
        .iter()
        .filter_map(|b| {
            let col = traj.get(&b.quantity)?;
            let n = col.len().max(1) as f64;
            let hits = col.iter().filter(|&&v| violates(v, b)).count();
            let rate = hits as f64 / n;
            let stderr = (b.epsilon * (1.0 - b.epsilon) / n).sqrt();
            let analytic_prob = analytic.get(&b.quantity).map_or(f64::NAN, |m| {
                let sd = m.variance.sqrt();
                let gap = match b.side {
                    Side::Upper => b.value - m.mean,
                    Side::Lower => m.mean - b.value,
                };
                if sd > 0.0 {
                    normal.sf(gap / sd)
                } else if gap >= -VIOLATION_TOLERANCE * b.value.abs().max(1.0) {
                    0.0
                } else {
                    1.0
                }
            });
            Some(ViolationCheck {
                quantity: b.quantity.to_string(),
                side: b.side,
                bound: b.value,
                epsilon: b.epsilon,
                analytic_prob,
                empirical_rate: rate,
                stderr,
                pass: rate <= b.epsilon + 4.0 * stderr,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentCheck {
    pub quantity: String,
    pub analytic_mean: f64,
    pub analytic_variance: f64,
    pub sample_mean: f64,
    pub sample_variance: f64,
    pub mean_ok: bool,
    pub variance_ok: bool,
}

/// Means within 4 standard errors; variances within 5% where above 1e-6.
pub fn compare_moments(
    sample: &BTreeMap<Quantity, SampleMoments>,
    analytic: &BTreeMap<Quantity, Moments>,
) -> Vec<MomentCheck> {
    sample
        .iter()
        .filter_map(|(q, s)| {
            let a = analytic.get(q)?;
            let se = (a.variance / s.n.max(1) as f64).sqrt();
            let mean_ok = (s.mean - a.mean).abs() <= 4.0 * se + 1e-9 * a.mean.abs().max(1.0);
            let variance_ok = if a.variance > 1e-6 {
                (s.variance - a.variance).abs() <= 0.05 * a.variance
            } else {
                s.variance <= 1e-6 + 1e-9
            };
            Some(MomentCheck {
                quantity: q.to_string(),
                analytic_mean: a.mean,
                analytic_variance: a.variance,
                sample_mean: s.mean,
                sample_variance: s.variance,
                mean_ok,
                variance_ok,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub samples: usize,
    pub seed: u64,
    pub constraints: Vec<ViolationCheck>,
    pub moments: Vec<MomentCheck>,
    pub max_balance_residual: f64,
    pub max_energy_path_gap: f64,
    pub max_telescoping_gap: f64,
    pub pass: bool,
}

impl ValidationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn worst_violation_rate(&self) -> f64 {
        self.constraints
            .iter()
            .map(|c| c.empirical_rate)
            .fold(0.0, f64::max)
    }
}

/// Full check: sample, realize, compare moments and violation rates.
pub fn validate_solution(
    policies: &PolicySolution,
    layout: &Layout,
    case: &GridCase,
    records: &[ChanceRecord],
    n: usize,
    seed: u64,
) -> ValidationReport {
    let batch = sample_germ(n, seed, layout.germ.dim());
    let traj = realize(policies, layout, case, &batch);
    let analytic = analytic_moments(policies, layout, case);
    let constraints = empirical_violation(&traj, &bounds_from_records(records), &analytic);
    let moments = compare_moments(&empirical_moments(&traj), &analytic);
    let pass = constraints.iter().all(|c| c.pass)
        && moments.iter().all(|m| m.mean_ok && m.variance_ok)
        && traj.max_balance_residual <= 1e-9
        && traj.max_energy_path_gap <= 1e-10
        && traj.max_telescoping_gap <= 1e-10;
    ValidationReport {
        samples: n,
        seed,
        constraints,
        moments,
        max_balance_residual: traj.max_balance_residual,
        max_energy_path_gap: traj.max_energy_path_gap,
        max_telescoping_gap: traj.max_telescoping_gap,
        pass,
    }
}
