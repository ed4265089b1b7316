//! Sparse affine expressions over scalar decision variables.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Index of a scalar decision variable inside a [`crate::socp::ConicProgram`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VarId(pub usize);

impl fmt::Display for VarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x{}", self.0)
    }
}

/// What a variable stands for. Kept structural so that allocating tens of
/// thousands of policy scalars does not allocate strings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VarLabel {
    /// `[û_i]_t` or `[ŝ_i]_t`; `device` indexes generators first, then storages.
    Nominal { device: usize, t: usize },
    /// `[G_{i,j}]_{tk}` / `[S_{i,j}]_{tk}`; `block` is the disturbance position
    /// under local balancing and 0 under global balancing.
    Response {
        device: usize,
        block: usize,
        t: usize,
        k: usize,
    },
    /// Epigraph of `E[u]²` (`variance == false`) or `Var(u)` for generator
    /// `device` at time `t`.
    CostEpigraph {
        device: usize,
        t: usize,
        variance: bool,
    },
    Auxiliary { index: usize },
}

impl VarLabel {
    pub fn is_policy(&self) -> bool {
        matches!(self, VarLabel::Nominal { .. } | VarLabel::Response { .. })
    }
}

/// Anything that hands out fresh variables.
pub trait VarAllocator {
    fn alloc(&mut self, label: VarLabel) -> VarId;
}

/// Allocator that only records labels. Useful for counting.
#[derive(Debug, Default, Clone)]
pub struct VarRegistry {
    labels: Vec<VarLabel>,
}

impl VarRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[VarLabel] {
        &self.labels
    }
}

impl VarAllocator for VarRegistry {
    fn alloc(&mut self, label: VarLabel) -> VarId {
        self.labels.push(label);
        VarId(self.labels.len() - 1)
    }
}

/// `Σ coef·x + constant`.
///
/// Terms are kept sorted by variable and merged, so two expressions that are
/// mathematically equal compare equal.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LinExpr {
    terms: Vec<(VarId, f64)>,
    constant: f64,
}

impl LinExpr {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn var(v: VarId) -> Self {
        Self::term(v, 1.0)
    }

    pub fn term(v: VarId, coef: f64) -> Self {
        let terms = if coef == 0.0 { vec![] } else { vec![(v, coef)] };
        Self {
            terms,
            constant: 0.0,
        }
    }

    /// Builds from arbitrary (possibly repeated) terms.
    pub fn from_terms(terms: impl IntoIterator<Item = (VarId, f64)>, constant: f64) -> Self {
        let mut e = Self {
            terms: terms.into_iter().collect(),
            constant,
        };
        e.normalize();
        e
    }

    pub fn terms(&self) -> &[(VarId, f64)] {
        &self.terms
    }

    pub fn constant_term(&self) -> f64 {
        self.constant
    }

    /// True when no variable appears.
    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty() && self.constant == 0.0
    }

    pub fn add_constant(&mut self, c: f64) {
        self.constant += c;
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &LinExpr, scale: f64) {
        if scale == 0.0 {
            return;
        }
        self.constant += scale * other.constant;
        if other.terms.is_empty() {
            return;
        }
        if self.terms.is_empty() {
            self.terms = other.terms.iter().map(|&(v, c)| (v, c * scale)).collect();
            return;
        }
        // Both sorted: linear merge.
        let mut merged = Vec::with_capacity(self.terms.len() + other.terms.len());
        let (mut i, mut j) = (0, 0);
        while i < self.terms.len() && j < other.terms.len() {
            let (va, ca) = self.terms[i];
            let (vb, cb) = other.terms[j];
            match va.cmp(&vb) {
                std::cmp::Ordering::Less => {
                    merged.push((va, ca));
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    merged.push((vb, cb * scale));
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    let c = ca + cb * scale;
                    if c != 0.0 {
                        merged.push((va, c));
                    }
                    i += 1;
                    j += 1;
                }
            }
        }
        merged.extend_from_slice(&self.terms[i..]);
        merged.extend(other.terms[j..].iter().map(|&(v, c)| (v, c * scale)));
        self.terms = merged;
    }

    pub fn add_term(&mut self, v: VarId, coef: f64) {
        self.add_scaled(&LinExpr::term(v, coef), 1.0);
    }

    pub fn scaled(&self, s: f64) -> LinExpr {
        if s == 0.0 {
            return LinExpr::zero();
        }
        LinExpr {
            terms: self.terms.iter().map(|&(v, c)| (v, c * s)).collect(),
            constant: self.constant * s,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .fold(self.constant, |acc, &(v, c)| acc + c * x[v.0])
    }

    /// Largest variable index referenced, if any.
    pub fn max_var(&self) -> Option<VarId> {
        self.terms.last().map(|&(v, _)| v)
    }

    fn normalize(&mut self) {
        self.terms.sort_by_key(|&(v, _)| v);
        let mut out: Vec<(VarId, f64)> = Vec::with_capacity(self.terms.len());
        for &(v, c) in &self.terms {
            match out.last_mut() {
                Some(last) if last.0 == v => last.1 += c,
                _ => out.push((v, c)),
            }
        }
        out.retain(|&(_, c)| c != 0.0);
        self.terms = out;
    }
}

impl std::ops::Add for &LinExpr {
    type Output = LinExpr;
    fn add(self, rhs: &LinExpr) -> LinExpr {
        let mut out = self.clone();
        out.add_scaled(rhs, 1.0);
        out
    }
}

impl std::ops::Sub for &LinExpr {
    type Output = LinExpr;
    fn sub(self, rhs: &LinExpr) -> LinExpr {
        let mut out = self.clone();
        out.add_scaled(rhs, -1.0);
        out
    }
}

impl fmt::Display for LinExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (v, c)) in self.terms.iter().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            write!(f, "{c}·{v}")?;
        }
        if self.terms.is_empty() || self.constant != 0.0 {
            if !self.terms.is_empty() {
                write!(f, " + ")?;
            }
            write!(f, "{}", self.constant)?;
        }
        Ok(())
    }
}
