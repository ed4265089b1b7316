//! Grid case description, validation and power transfer distribution factors.
//!
//! Cases are read from a small JSON schema (all quantities per-unit):
//!
//! ```json
//! {
//!   "buses": [1, 2, 3],
//!   "lines": [{"id": 1, "from": 1, "to": 2, "x": 0.1, "p_line_max": 4.0}],
//!   "generators": [{"bus": 1, "u_min": 0.0, "u_max": 2.2, "ramp_frac": 0.15,
//!                   "gamma2": 0.01, "gamma1": 0.3, "gamma0": 0.2}],
//!   "storages": [{"bus": 3, "e_min": 0.0, "e_max": 6.0, "s_min": -10.0, "s_max": 10.0,
//!                 "e_ic_mean": 2.0, "e_ic_var": 0.0, "e_term_min": 0.19, "e_term_max": 0.21}],
//!   "disturbances": [{"bus": 2, "forecast": "artificial"}],
//!   "loads": [{"bus": 2, "d_nom": 1.0}, {"bus": 3, "d_nom": 0.5}]
//! }
//! ```
//!
//! Optional fields: `lines[].c_min`/`c_max` (default ∓0.85·`p_line_max`),
//! `generators[].p_max` (rating that `ramp_frac` refers to, default `u_max`),
//! `disturbances[].capacity` (peak used when scaling a historical series),
//! `disturbances[].d_nom` (nominal value, default: the `loads` entry at that bus).
//!
//! A `loads` entry at a bus that is also listed in `disturbances` supplies the
//! nominal value of that disturbance and is not counted a second time.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use thiserror::Error;

/// Default line-limit fraction of the thermal rating.
pub const LINE_LIMIT_FRACTION: f64 = 0.85;

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("case parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("cannot read case file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid case: {0}")]
    Validation(String),
    #[error("case graph is disconnected: bus {0} is unreachable")]
    Disconnected(usize),
    #[error("bus {0} hosts both a generator and a storage")]
    DeviceConflict(usize),
    #[error("reference bus {0} is not part of the case")]
    UnknownReference(usize),
    #[error("singular reduced Laplacian (network disconnected or zero admittance)")]
    SingularLaplacian,
}

// ---------------------------------------------------------------------------
// On-disk records

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub buses: Vec<usize>,
    pub lines: Vec<LineRecord>,
    #[serde(default)]
    pub generators: Vec<GeneratorRecord>,
    #[serde(default)]
    pub storages: Vec<StorageRecord>,
    #[serde(default)]
    pub disturbances: Vec<DisturbanceRecord>,
    #[serde(default)]
    pub loads: Vec<LoadRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineRecord {
    pub id: usize,
    pub from: usize,
    pub to: usize,
    pub x: f64,
    pub p_line_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_max: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorRecord {
    pub bus: usize,
    pub u_min: f64,
    pub u_max: f64,
    pub ramp_frac: f64,
    pub gamma2: f64,
    pub gamma1: f64,
    pub gamma0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_max: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StorageRecord {
    pub bus: usize,
    pub e_min: f64,
    pub e_max: f64,
    pub s_min: f64,
    pub s_max: f64,
    pub e_ic_mean: f64,
    pub e_ic_var: f64,
    pub e_term_min: f64,
    pub e_term_max: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceRecord {
    pub bus: usize,
    pub forecast: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_nom: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadRecord {
    pub bus: usize,
    pub d_nom: f64,
}

// ---------------------------------------------------------------------------
// Validated model. Every `bus` field below is a dense index into `bus_ids`.

#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub id: usize,
    pub from: usize,
    pub to: usize,
    pub x: f64,
    pub p_max: f64,
    pub c_min: f64,
    pub c_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub bus: usize,
    pub u_min: f64,
    pub u_max: f64,
    pub ramp_min: f64,
    pub ramp_max: f64,
    pub gamma2: f64,
    pub gamma1: f64,
    pub gamma0: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Storage {
    pub bus: usize,
    pub e_min: f64,
    pub e_max: f64,
    pub s_min: f64,
    pub s_max: f64,
    pub e_ic_mean: f64,
    pub e_ic_var: f64,
    pub e_term_min: f64,
    pub e_term_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Disturbance {
    pub bus: usize,
    /// `artificial`, or a path to a historical CSV / forecast JSON.
    pub source: String,
    pub capacity: Option<f64>,
    /// Nominal value for the artificial profile, if one is known.
    pub d_nom: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Load {
    pub bus: usize,
    pub d_nom: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCase {
    pub name: String,
    pub bus_ids: Vec<usize>,
    pub lines: Vec<Line>,
    pub generators: Vec<Generator>,
    pub storages: Vec<Storage>,
    pub disturbances: Vec<Disturbance>,
    /// Certain loads only; loads at disturbance buses are folded into the disturbance.
    pub loads: Vec<Load>,
}

impl GridCase {
    pub fn n_buses(&self) -> usize {
        self.bus_ids.len()
    }

    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.bus_ids.iter().position(|&b| b == id)
    }

    pub fn bus_id(&self, index: usize) -> usize {
        self.bus_ids[index]
    }

    /// Reference bus used when none is configured: the first generator bus.
    pub fn default_reference(&self) -> usize {
        self.generators
            .first()
            .map(|g| self.bus_ids[g.bus])
            .unwrap_or(self.bus_ids[0])
    }

    /// Serialises back into the on-disk schema.
    pub fn to_document(&self) -> CaseDocument {
        let id = |i: usize| self.bus_ids[i];
        let mut loads: Vec<LoadRecord> = self
            .loads
            .iter()
            .map(|l| LoadRecord {
                bus: id(l.bus),
                d_nom: l.d_nom,
            })
            .collect();
        loads.sort_by_key(|l| l.bus);
        CaseDocument {
            name: Some(self.name.clone()),
            buses: self.bus_ids.clone(),
            lines: self
                .lines
                .iter()
                .map(|l| LineRecord {
                    id: l.id,
                    from: id(l.from),
                    to: id(l.to),
                    x: l.x,
                    p_line_max: l.p_max,
                    c_min: Some(l.c_min),
                    c_max: Some(l.c_max),
                })
                .collect(),
            generators: self
                .generators
                .iter()
                .map(|g| GeneratorRecord {
                    bus: id(g.bus),
                    u_min: g.u_min,
                    u_max: g.u_max,
                    ramp_frac: 1.0,
                    gamma2: g.gamma2,
                    gamma1: g.gamma1,
                    gamma0: g.gamma0,
                    p_max: Some(g.ramp_max),
                })
                .collect(),
            storages: self
                .storages
                .iter()
                .map(|s| StorageRecord {
                    bus: id(s.bus),
                    e_min: s.e_min,
                    e_max: s.e_max,
                    s_min: s.s_min,
                    s_max: s.s_max,
                    e_ic_mean: s.e_ic_mean,
                    e_ic_var: s.e_ic_var,
                    e_term_min: s.e_term_min,
                    e_term_max: s.e_term_max,
                })
                .collect(),
            disturbances: self
                .disturbances
                .iter()
                .map(|d| DisturbanceRecord {
                    bus: id(d.bus),
                    forecast: d.source.clone(),
                    capacity: d.capacity,
                    d_nom: d.d_nom,
                })
                .collect(),
            loads,
        }
    }
}

/// Parses and validates a case document.
pub fn parse_case(source: &str) -> Result<GridCase, CaseError> {
    let doc: CaseDocument = serde_json::from_str(source)?;
    from_document(doc)
}

pub fn load_case(path: impl AsRef<Path>) -> Result<GridCase, CaseError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| CaseError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut case = parse_case(&text)?;
    if case.name.is_empty() {
        case.name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
    }
    Ok(case)
}

fn check_bounds(what: &str, lo: f64, hi: f64) -> Result<(), CaseError> {
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(CaseError::Validation(format!("{what}: bounds must be finite")));
    }
    if lo > hi {
        return Err(CaseError::Validation(format!(
            "{what}: lower bound {lo} exceeds upper bound {hi}"
        )));
    }
    Ok(())
}

pub fn from_document(doc: CaseDocument) -> Result<GridCase, CaseError> {
    if doc.buses.is_empty() {
        return Err(CaseError::Validation("buses: at least one bus required".into()));
    }
    let mut index = BTreeMap::new();
    for (i, &b) in doc.buses.iter().enumerate() {
        if index.insert(b, i).is_some() {
            return Err(CaseError::Validation(format!("buses: duplicate bus id {b}")));
        }
    }
    let lookup = |field: &str, b: usize| -> Result<usize, CaseError> {
        index
            .get(&b)
            .copied()
            .ok_or_else(|| CaseError::Validation(format!("{field}: unknown bus {b}")))
    };

    let mut lines = Vec::with_capacity(doc.lines.len());
    let mut seen_lines = BTreeMap::new();
    for l in &doc.lines {
        if seen_lines.insert(l.id, ()).is_some() {
            return Err(CaseError::Validation(format!("lines: duplicate line id {}", l.id)));
        }
        let from = lookup("lines.from", l.from)?;
        let to = lookup("lines.to", l.to)?;
        if from == to {
            return Err(CaseError::Validation(format!("lines: line {} is a self-loop", l.id)));
        }
        if !(l.x > 0.0 && l.x.is_finite()) {
            return Err(CaseError::Validation(format!(
                "lines.x: line {} has non-positive reactance {}",
                l.id, l.x
            )));
        }
        if !(l.p_line_max >= 0.0) {
            return Err(CaseError::Validation(format!(
                "lines.p_line_max: line {} has negative rating",
                l.id
            )));
        }
        let c_max = l.c_max.unwrap_or(LINE_LIMIT_FRACTION * l.p_line_max);
        let c_min = l.c_min.unwrap_or(-LINE_LIMIT_FRACTION * l.p_line_max);
        check_bounds(&format!("line {}", l.id), c_min, c_max)?;
        lines.push(Line {
            id: l.id,
            from,
            to,
            x: l.x,
            p_max: l.p_line_max,
            c_min,
            c_max,
        });
    }
    lines.sort_by_key(|l| l.id);

    let mut occupied: BTreeMap<usize, &str> = BTreeMap::new();
    let mut generators = Vec::with_capacity(doc.generators.len());
    for g in &doc.generators {
        let bus = lookup("generators.bus", g.bus)?;
        if occupied.insert(bus, "generator").is_some() {
            return Err(CaseError::Validation(format!(
                "generators: more than one generator at bus {}",
                g.bus
            )));
        }
        check_bounds(&format!("generator at bus {}", g.bus), g.u_min, g.u_max)?;
        if !(g.ramp_frac >= 0.0) {
            return Err(CaseError::Validation(format!(
                "generators.ramp_frac: negative at bus {}",
                g.bus
            )));
        }
        if !(g.gamma2 >= 0.0) {
            return Err(CaseError::Validation(format!(
                "generators.gamma2: negative at bus {}",
                g.bus
            )));
        }
        let rating = g.p_max.unwrap_or(g.u_max);
        let ramp = g.ramp_frac * rating;
        generators.push(Generator {
            bus,
            u_min: g.u_min,
            u_max: g.u_max,
            ramp_min: -ramp,
            ramp_max: ramp,
            gamma2: g.gamma2,
            gamma1: g.gamma1,
            gamma0: g.gamma0,
        });
    }

    let mut storages = Vec::with_capacity(doc.storages.len());
    for s in &doc.storages {
        let bus = lookup("storages.bus", s.bus)?;
        match occupied.insert(bus, "storage") {
            Some("generator") => return Err(CaseError::DeviceConflict(s.bus)),
            Some(_) => {
                return Err(CaseError::Validation(format!(
                    "storages: more than one storage at bus {}",
                    s.bus
                )))
            }
            None => {}
        }
        let tag = format!("storage at bus {}", s.bus);
        check_bounds(&format!("{tag} energy"), s.e_min, s.e_max)?;
        check_bounds(&format!("{tag} injection"), s.s_min, s.s_max)?;
        check_bounds(&format!("{tag} terminal band"), s.e_term_min, s.e_term_max)?;
        if !(s.e_ic_var >= 0.0) {
            return Err(CaseError::Validation(format!("{tag}: negative e_ic_var")));
        }
        storages.push(Storage {
            bus,
            e_min: s.e_min,
            e_max: s.e_max,
            s_min: s.s_min,
            s_max: s.s_max,
            e_ic_mean: s.e_ic_mean,
            e_ic_var: s.e_ic_var,
            e_term_min: s.e_term_min,
            e_term_max: s.e_term_max,
        });
    }

    let mut load_nominal: BTreeMap<usize, f64> = BTreeMap::new();
    for l in &doc.loads {
        let bus = lookup("loads.bus", l.bus)?;
        if !l.d_nom.is_finite() {
            return Err(CaseError::Validation(format!("loads.d_nom: non-finite at bus {}", l.bus)));
        }
        *load_nominal.entry(bus).or_insert(0.0) += l.d_nom;
    }

    let mut disturbances = Vec::with_capacity(doc.disturbances.len());
    let mut disturbed = BTreeMap::new();
    for d in &doc.disturbances {
        let bus = lookup("disturbances.bus", d.bus)?;
        if disturbed.insert(bus, ()).is_some() {
            return Err(CaseError::Validation(format!(
                "disturbances: bus {} listed twice",
                d.bus
            )));
        }
        if d.forecast.trim().is_empty() {
            return Err(CaseError::Validation(format!(
                "disturbances.forecast: empty at bus {}",
                d.bus
            )));
        }
        if let Some(c) = d.capacity {
            if !(c > 0.0) {
                return Err(CaseError::Validation(format!(
                    "disturbances.capacity: must be positive at bus {}",
                    d.bus
                )));
            }
        }
        disturbances.push(Disturbance {
            bus,
            source: d.forecast.clone(),
            capacity: d.capacity,
            d_nom: d.d_nom.or_else(|| load_nominal.get(&bus).copied()),
        });
    }
    let loads = load_nominal
        .into_iter()
        .filter(|(bus, _)| !disturbed.contains_key(bus))
        .map(|(bus, d_nom)| Load { bus, d_nom })
        .collect();

    let case = GridCase {
        name: doc.name.unwrap_or_default(),
        bus_ids: doc.buses,
        lines,
        generators,
        storages,
        disturbances,
        loads,
    };
    check_connected(&case)?;
    Ok(case)
}

fn check_connected(case: &GridCase) -> Result<(), CaseError> {
    let n = case.n_buses();
    let mut adj = vec![Vec::new(); n];
    for l in &case.lines {
        adj[l.from].push(l.to);
        adj[l.to].push(l.from);
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(b) = queue.pop_front() {
        for &nb in &adj[b] {
            if !seen[nb] {
                seen[nb] = true;
                queue.push_back(nb);
            }
        }
    }
    match seen.iter().position(|s| !s) {
        Some(i) => Err(CaseError::Disconnected(case.bus_ids[i])),
        None => Ok(()),
    }
}

/// Power transfer distribution factors: `flows = Φ · injections`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ptdf {
    /// `N_l × N`, rows ordered by line id.
    pub matrix: DMatrix<f64>,
    pub reference: usize,
}

impl Ptdf {
    pub fn n_lines(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn get(&self, line: usize, bus: usize) -> f64 {
        self.matrix[(line, bus)]
    }

    pub fn flows(&self, injections: &[f64]) -> Vec<f64> {
        let p = DVector::from_column_slice(injections);
        (&self.matrix * p).iter().copied().collect()
    }
}

/// Builds Φ by solving the reduced nodal susceptance system with `reference_bus`
/// (a bus id) as angle reference.
///
/// Flow on line `l` is positive from `from` to `to`:
/// `f_l = (θ_from − θ_to) / x_l`.
pub fn compute_ptdf(case: &GridCase, reference_bus: usize) -> Result<Ptdf, CaseError> {
    let r = case
        .bus_index(reference_bus)
        .ok_or(CaseError::UnknownReference(reference_bus))?;
    let n = case.n_buses();
    let nl = case.lines.len();
    let mut laplacian = DMatrix::<f64>::zeros(n, n);
    for l in &case.lines {
        let b = 1.0 / l.x;
        laplacian[(l.from, l.from)] += b;
        laplacian[(l.to, l.to)] += b;
        laplacian[(l.from, l.to)] -= b;
        laplacian[(l.to, l.from)] -= b;
    }
    let keep: Vec<usize> = (0..n).filter(|&i| i != r).collect();
    let m = keep.len();
    let mut reduced = DMatrix::<f64>::zeros(m, m);
    for (a, &i) in keep.iter().enumerate() {
        for (b, &j) in keep.iter().enumerate() {
            reduced[(a, b)] = laplacian[(i, j)];
        }
    }
    // Angles for unit injections at each non-reference bus (withdrawn at the reference).
    let inverse = if m == 0 {
        DMatrix::zeros(0, 0)
    } else {
        let chol = reduced.cholesky().ok_or(CaseError::SingularLaplacian)?;
        chol.inverse()
    };
    let mut matrix = DMatrix::<f64>::zeros(nl, n);
    for (row, l) in case.lines.iter().enumerate() {
        for (b, &bus) in keep.iter().enumerate() {
            let theta = |node: usize| -> f64 {
                if node == r {
                    0.0
                } else {
                    let a = keep.iter().position(|&k| k == node).unwrap();
                    inverse[(a, b)]
                }
            };
            matrix[(row, bus)] = (theta(l.from) - theta(l.to)) / l.x;
        }
    }
    Ok(Ptdf {
        matrix,
        reference: reference_bus,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn triangle() -> GridCase {
        parse_case(
            r#"{
            "buses": [1, 2, 3],
            "lines": [
                {"id": 1, "from": 1, "to": 2, "x": 1.0, "p_line_max": 1.0},
                {"id": 2, "from": 1, "to": 3, "x": 1.0, "p_line_max": 1.0},
                {"id": 3, "from": 3, "to": 2, "x": 1.0, "p_line_max": 1.0}
            ],
            "generators": [{"bus": 1, "u_min": 0, "u_max": 1, "ramp_frac": 0.15,
                            "gamma2": 0.01, "gamma1": 0.3, "gamma0": 0.2}]
        }"#,
        )
        .unwrap()
    }

    #[test]
    fn triangle_flows_split_two_to_one() {
        let case = triangle();
        let ptdf = compute_ptdf(&case, 1).unwrap();
        let f = ptdf.flows(&[1.0, -1.0, 0.0]);
        assert_abs_diff_eq!(f[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f[1], 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f[2], 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_injection_zero_flow() {
        let ptdf = compute_ptdf(&triangle(), 2).unwrap();
        assert!(ptdf.flows(&[0.0; 3]).iter().all(|&f| f == 0.0));
    }

    #[test]
    fn two_bus_single_line() {
        let case = parse_case(
            r#"{"buses": [1, 2],
                "lines": [{"id": 7, "from": 1, "to": 2, "x": 0.5, "p_line_max": 2.0}],
                "generators": [{"bus": 1, "u_min": 0, "u_max": 2, "ramp_frac": 0.15,
                                "gamma2": 0.01, "gamma1": 0.3, "gamma0": 0.2}],
                "loads": [{"bus": 2, "d_nom": 1.0}]}"#,
        )
        .unwrap();
        assert_eq!(case.loads.len(), 1);
        let f = compute_ptdf(&case, 1).unwrap().flows(&[1.0, -1.0]);
        assert_abs_diff_eq!(f[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(case.lines[0].c_max, 1.7, epsilon = 1e-12);
        assert_abs_diff_eq!(case.lines[0].c_min, -1.7, epsilon = 1e-12);
    }

    #[test]
    fn generator_and_storage_on_one_bus_rejected() {
        let err = parse_case(
            r#"{"buses": [1, 2, 3],
                "lines": [{"id": 1, "from": 1, "to": 2, "x": 0.1, "p_line_max": 1},
                          {"id": 2, "from": 2, "to": 3, "x": 0.1, "p_line_max": 1}],
                "generators": [{"bus": 3, "u_min": 0, "u_max": 1, "ramp_frac": 0.1,
                                "gamma2": 0.01, "gamma1": 0.3, "gamma0": 0.2}],
                "storages": [{"bus": 3, "e_min": 0, "e_max": 6, "s_min": -10, "s_max": 10,
                              "e_ic_mean": 2, "e_ic_var": 0, "e_term_min": 0.19, "e_term_max": 0.21}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, CaseError::DeviceConflict(3)), "{err}");
    }

    #[test]
    fn disconnected_graph_rejected() {
        let err = parse_case(
            r#"{"buses": [1, 2, 3],
                "lines": [{"id": 1, "from": 1, "to": 2, "x": 0.1, "p_line_max": 1}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, CaseError::Disconnected(3)), "{err}");
    }

    #[test]
    fn missing_field_is_named() {
        let err = parse_case(
            r#"{"buses": [1, 2], "lines": [{"id": 1, "from": 1, "to": 2, "p_line_max": 1}]}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("`x`"), "{err}");
    }

    #[test]
    fn non_positive_reactance_rejected() {
        let err = parse_case(
            r#"{"buses": [1, 2], "lines": [{"id": 1, "from": 1, "to": 2, "x": 0.0, "p_line_max": 1}]}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("reactance"), "{err}");
    }

    #[test]
    fn inverted_bounds_rejected() {
        let err = parse_case(
            r#"{"buses": [1, 2], "lines": [{"id": 1, "from": 1, "to": 2, "x": 0.1, "p_line_max": 1}],
                "generators": [{"bus": 1, "u_min": 2, "u_max": 1, "ramp_frac": 0.1,
                                "gamma2": 0.01, "gamma1": 0.3, "gamma0": 0.2}]}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("exceeds"), "{err}");
    }

    #[test]
    fn disturbance_takes_nominal_from_load() {
        let case = parse_case(
            r#"{"buses": [1, 2], "lines": [{"id": 1, "from": 1, "to": 2, "x": 0.1, "p_line_max": 1}],
                "disturbances": [{"bus": 2, "forecast": "artificial"}],
                "loads": [{"bus": 2, "d_nom": -0.7}, {"bus": 1, "d_nom": 0.2}]}"#,
        )
        .unwrap();
        assert_eq!(case.disturbances[0].d_nom, Some(-0.7));
        assert_eq!(case.loads, vec![Load { bus: 0, d_nom: 0.2 }]);
    }
}
