//! Gaussian-process forecasts of uncertain disturbances.
//!
//! A [`Forecast`] is a mean trajectory `d̂` plus a lower-triangular factor `L`
//! so that `d = d̂ + L·Ξ` with `Ξ` standard normal. Forecasts come either from
//! Gaussian-process regression on a historical series or from the artificial
//! sinusoidal profile.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use crate::netcase::GridCase;
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;
use thiserror::Error;

/// Default diagonal jitter applied before factorising a predictive covariance.
pub const DEFAULT_JITTER: f64 = 1e-7;

/// Scale of the printed 12-step reference factor.
const REFERENCE_FACTOR_DIVISOR: f64 = 1e4;

#[rustfmt::skip]
const REFERENCE_FACTOR: [[f64; 12]; 12] = [
    [  87.0,    0.0,   0.0,   0.0,   0.0,   0.0,   0.0,  0.0,  0.0,  0.0, 0.0, 0.0],
    [ 176.0,   20.0,   0.0,   0.0,   0.0,   0.0,   0.0,  0.0,  0.0,  0.0, 0.0, 0.0],
    [ 292.0,   60.0,   7.0,   0.0,   0.0,   0.0,   0.0,  0.0,  0.0,  0.0, 0.0, 0.0],
    [ 434.0,  124.0,  26.0,   3.0,   0.0,   0.0,   0.0,  0.0,  0.0,  0.0, 0.0, 0.0],
    [ 594.0,  211.0,  63.0,  13.0,   3.0,   0.0,   0.0,  0.0,  0.0,  0.0, 0.0, 0.0],
    [ 764.0,  321.0, 123.0,  31.0,  13.0,   3.0,   0.0,  0.0,  0.0,  0.0, 0.0, 0.0],
    [ 937.0,  447.0, 208.0,  63.0,  32.0,  11.0,   3.0,  0.0,  0.0,  0.0, 0.0, 0.0],
    [1103.0,  582.0, 317.0, 109.0,  65.0,  27.0,  10.0,  3.0,  0.0,  0.0, 0.0, 0.0],
    [1257.0,  718.0, 447.0, 172.0, 116.0,  55.0,  26.0, 10.0,  3.0,  0.0, 0.0, 0.0],
    [1392.0,  847.0, 591.0, 251.0, 184.0,  98.0,  53.0, 26.0, 10.0,  3.0, 0.0, 0.0],
    [1504.0,  964.0, 741.0, 342.0, 271.0, 156.0,  94.0, 53.0, 24.0,  9.0, 3.0, 0.0],
    [1590.0, 1063.0, 889.0, 441.0, 371.0, 229.0, 151.0, 94.0, 50.0, 24.0, 9.0, 3.0],
];

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("factorization failed with jitter {jitter:e}; retry with a larger jitter")]
    Factorization { jitter: f64 },
    #[error("Gram matrix is not positive definite after jitter (min eigenvalue ≈ {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },
    #[error("invalid kernel: {0}")]
    Kernel(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("forecast JSON: {0}")]
    Json(#[from] serde_json::Error),
}

// ---------------------------------------------------------------------------
// Forecast

#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    pub mean: DVector<f64>,
    /// Lower-triangular `T × T`. All zero encodes a deterministic disturbance.
    pub factor: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct ForecastDoc {
    mean: Vec<f64>,
    factor: Vec<Vec<f64>>,
}

impl Forecast {
    /// Builds a forecast, checking shape and causality of the factor.
    pub fn new(mean: DVector<f64>, factor: DMatrix<f64>) -> Result<Self, ForecastError> {
        let t = mean.len();
        if factor.nrows() != t || factor.ncols() != t {
            return Err(ForecastError::Dimension {
                expected: t,
                got: factor.nrows().max(factor.ncols()),
            });
        }
        for r in 0..t {
            for c in r + 1..t {
                if factor[(r, c)] != 0.0 {
                    return Err(ForecastError::Input(format!(
                        "factor entry ({}, {}) above the diagonal is nonzero",
                        r + 1,
                        c + 1
                    )));
                }
            }
        }
        Ok(Self { mean, factor })
    }

    pub fn deterministic(mean: DVector<f64>) -> Self {
        let t = mean.len();
        Self {
            mean,
            factor: DMatrix::zeros(t, t),
        }
    }

    pub fn horizon(&self) -> usize {
        self.mean.len()
    }

    pub fn is_deterministic(&self) -> bool {
        self.factor.iter().all(|&v| v == 0.0)
    }

    /// `Var d(t) = Σ_{k≤t} L_tk²`.
    pub fn variance(&self) -> Vec<f64> {
        (0..self.horizon())
            .map(|t| (0..=t).map(|k| self.factor[(t, k)].powi(2)).sum())
            .collect()
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        &self.factor * self.factor.transpose()
    }

    pub fn to_json(&self) -> String {
        let doc = ForecastDoc {
            mean: self.mean.iter().copied().collect(),
            factor: (0..self.horizon())
                .map(|r| self.factor.row(r).iter().copied().collect())
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("forecast serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, ForecastError> {
        let doc: ForecastDoc = serde_json::from_str(text)?;
        let t = doc.mean.len();
        if doc.factor.len() != t || doc.factor.iter().any(|r| r.len() != t) {
            return Err(ForecastError::Dimension {
                expected: t,
                got: doc.factor.len(),
            });
        }
        let factor = DMatrix::from_fn(t, t, |r, c| doc.factor[r][c]);
        Forecast::new(DVector::from_vec(doc.mean), factor)
    }
}

// ---------------------------------------------------------------------------
// Kernel

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelComponent {
    /// `σ²·cos(2π(t−t')/l)`
    Cosine { variance: f64, lengthscale: f64 },
    /// `σ²·exp(−(t−t')²/(2l²))`
    Rbf { variance: f64, lengthscale: f64 },
    /// `σ` (added as is)
    Constant { variance: f64 },
}

impl KernelComponent {
    fn eval(&self, dt: f64) -> f64 {
        match *self {
            KernelComponent::Cosine {
                variance,
                lengthscale,
            } => variance * (2.0 * PI * dt / lengthscale).cos(),
            KernelComponent::Rbf {
                variance,
                lengthscale,
            } => variance * (-dt * dt / (2.0 * lengthscale * lengthscale)).exp(),
            KernelComponent::Constant { variance } => variance,
        }
    }

    fn params(&self) -> Vec<f64> {
        match *self {
            KernelComponent::Cosine {
                variance,
                lengthscale,
            }
            | KernelComponent::Rbf {
                variance,
                lengthscale,
            } => vec![variance, lengthscale],
            KernelComponent::Constant { variance } => vec![variance],
        }
    }

    fn with_params(&self, p: &[f64]) -> Self {
        match *self {
            KernelComponent::Cosine { .. } => KernelComponent::Cosine {
                variance: p[0],
                lengthscale: p[1],
            },
            KernelComponent::Rbf { .. } => KernelComponent::Rbf {
                variance: p[0],
                lengthscale: p[1],
            },
            KernelComponent::Constant { .. } => KernelComponent::Constant { variance: p[0] },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub components: Vec<KernelComponent>,
    pub noise: f64,
}

impl KernelSpec {
    /// Cosine + RBF + constant, with starting values suited to hourly data.
    pub fn periodic_trend(data_variance: f64) -> Self {
        let v = data_variance.max(1e-6);
        Self {
            components: vec![
                KernelComponent::Cosine {
                    variance: 0.2 * v,
                    lengthscale: 24.0,
                },
                KernelComponent::Rbf {
                    variance: v,
                    lengthscale: 6.0,
                },
                KernelComponent::Constant { variance: 0.1 * v },
            ],
            noise: 1e-3 * v,
        }
    }

    pub fn validate(&self) -> Result<(), ForecastError> {
        if !(self.noise >= 0.0) {
            return Err(ForecastError::Kernel("noise variance must be ≥ 0".into()));
        }
        for c in &self.components {
            let p = c.params();
            if !(p[0] >= 0.0) {
                return Err(ForecastError::Kernel(format!("negative variance in {c:?}")));
            }
            if p.len() > 1 && !(p[1] > 0.0) {
                return Err(ForecastError::Kernel(format!("non-positive lengthscale in {c:?}")));
            }
        }
        Ok(())
    }

    fn params(&self) -> Vec<f64> {
        let mut p: Vec<f64> = self.components.iter().flat_map(|c| c.params()).collect();
        p.push(self.noise);
        p
    }

    fn with_params(&self, p: &[f64]) -> Self {
        let mut at = 0;
        let components = self
            .components
            .iter()
            .map(|c| {
                let n = c.params().len();
                let out = c.with_params(&p[at..at + n]);
                at += n;
                out
            })
            .collect();
        Self {
            components,
            noise: p[at],
        }
    }
}

/// Covariance `k(t, t')` of the composite kernel (noise excluded).
pub fn kernel_eval(spec: &KernelSpec, t: f64, t_prime: f64) -> f64 {
    let dt = t - t_prime;
    spec.components.iter().map(|c| c.eval(dt)).sum()
}

fn gram(spec: &KernelSpec, a: &[f64], b: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| kernel_eval(spec, a[i], b[j]))
}

// ---------------------------------------------------------------------------
// Regression

/// Fitted posterior. Targets are centred on their sample mean before fitting.
#[derive(Debug, Clone)]
pub struct GpPosterior {
    pub spec: KernelSpec,
    times: Vec<f64>,
    offset: f64,
    chol: Option<DMatrix<f64>>,
    alpha: DVector<f64>,
    log_marginal_likelihood: f64,
}

impl GpPosterior {
    pub fn log_marginal_likelihood(&self) -> f64 {
        self.log_marginal_likelihood
    }

    /// The zero-mean prior, i.e. a posterior without observations.
    pub fn prior(spec: KernelSpec) -> Self {
        Self {
            spec,
            times: Vec::new(),
            offset: 0.0,
            chol: None,
            alpha: DVector::zeros(0),
            log_marginal_likelihood: 0.0,
        }
    }
}

/// Options for the hyperparameter search.
#[derive(Debug, Clone)]
pub struct FitOptions {
    pub starts: usize,
    pub seed: u64,
    pub max_sweeps: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            starts: 16,
            seed: 0x5eed,
            max_sweeps: 60,
        }
    }
}

fn fit_fixed(
    times: &[f64],
    centred: &DVector<f64>,
    spec: &KernelSpec,
) -> Result<(DMatrix<f64>, DVector<f64>, f64), ForecastError> {
    let n = times.len();
    let mut k = gram(spec, times, times);
    for i in 0..n {
        k[(i, i)] += spec.noise;
    }
    let chol = match k.clone().cholesky() {
        Some(c) => c,
        None => {
            let scale = (0..n).map(|i| k[(i, i)].abs()).fold(1e-300, f64::max);
            let mut jittered = k.clone();
            for i in 0..n {
                jittered[(i, i)] += 1e-10 * scale;
            }
            match jittered.cholesky() {
                Some(c) => c,
                None => {
                    let min_eigenvalue = k.symmetric_eigenvalues().min();
                    return Err(ForecastError::NotPositiveDefinite { min_eigenvalue });
                }
            }
        }
    };
    let alpha = chol.solve(centred);
    let l = chol.l();
    let log_det: f64 = (0..n).map(|i| l[(i, i)].ln()).sum();
    let lml = -0.5 * centred.dot(&alpha) - log_det - 0.5 * n as f64 * (2.0 * PI).ln();
    Ok((l, alpha, lml))
}

/// Fits a GP to `(times, values)`.
///
/// With `optimize` set the hyperparameters maximise the log marginal likelihood
/// via a multi-start coordinate search in log space.
pub fn gpr_fit(
    times: &[f64],
    values: &[f64],
    spec: &KernelSpec,
    optimize: bool,
) -> Result<GpPosterior, ForecastError> {
    gpr_fit_with(times, values, spec, optimize, &FitOptions::default())
}

pub fn gpr_fit_with(
    times: &[f64],
    values: &[f64],
    spec: &KernelSpec,
    optimize: bool,
    options: &FitOptions,
) -> Result<GpPosterior, ForecastError> {
    spec.validate()?;
    if times.is_empty() || times.len() != values.len() {
        return Err(ForecastError::Input(format!(
            "need matching non-empty times/values, got {} and {}",
            times.len(),
            values.len()
        )));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(ForecastError::Input("times must be strictly increasing".into()));
    }
    let offset = values.iter().sum::<f64>() / values.len() as f64;
    let centred = DVector::from_iterator(values.len(), values.iter().map(|v| v - offset));

    let spec = if optimize {
        optimize_hyperparameters(times, &centred, spec, options)
    } else {
        spec.clone()
    };
    let (chol, alpha, lml) = fit_fixed(times, &centred, &spec)?;
    Ok(GpPosterior {
        spec,
        times: times.to_vec(),
        offset,
        chol: Some(chol),
        alpha,
        log_marginal_likelihood: lml,
    })
}

/// Log-space box for each hyperparameter, derived from the data scale.
fn bounds(spec: &KernelSpec, times: &[f64], centred: &DVector<f64>) -> Vec<(f64, f64)> {
    let n = centred.len().max(1) as f64;
    let var = (centred.dot(centred) / n).max(1e-8);
    let span = (times.last().unwrap() - times.first().unwrap()).max(1.0);
    let mut b = Vec::new();
    for c in &spec.components {
        match c {
            KernelComponent::Cosine { .. } => {
                b.push((1e-6 * var, 10.0 * var));
                b.push((2.0, 4.0 * span.max(24.0)));
            }
            KernelComponent::Rbf { .. } => {
                b.push((1e-6 * var, 10.0 * var));
                b.push((0.5, 4.0 * span));
            }
            KernelComponent::Constant { .. } => b.push((1e-8 * var, 10.0 * var)),
        }
    }
    b.push((1e-8 * var, var));
    b.into_iter().map(|(lo, hi)| (lo.ln(), hi.ln())).collect()
}

fn optimize_hyperparameters(
    times: &[f64],
    centred: &DVector<f64>,
    spec: &KernelSpec,
    options: &FitOptions,
) -> KernelSpec {
    let bx = bounds(spec, times, centred);
    let objective = |logp: &[f64]| -> f64 {
        let p: Vec<f64> = logp.iter().map(|v| v.exp()).collect();
        match fit_fixed(times, centred, &spec.with_params(&p)) {
            Ok((_, _, lml)) if lml.is_finite() => lml,
            _ => f64::NEG_INFINITY,
        }
    };
    let clamp = |v: f64, (lo, hi): (f64, f64)| v.clamp(lo, hi);

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let initial: Vec<f64> = spec
        .params()
        .iter()
        .zip(&bx)
        .map(|(&p, &b)| clamp(p.max(1e-300).ln(), b))
        .collect();
    let mut best = (objective(&initial), initial.clone());

    for start in 0..options.starts {
        let mut x: Vec<f64> = if start == 0 {
            initial.clone()
        } else {
            bx.iter().map(|&(lo, hi)| rng.gen_range(lo..=hi)).collect()
        };
        let mut fx = objective(&x);
        let mut steps: Vec<f64> = bx.iter().map(|&(lo, hi)| (hi - lo) / 4.0).collect();
        for _ in 0..options.max_sweeps {
            let mut improved = false;
            for i in 0..x.len() {
                for dir in [1.0, -1.0] {
                    let mut y = x.clone();
                    y[i] = clamp(x[i] + dir * steps[i], bx[i]);
                    if y[i] == x[i] {
                        continue;
                    }
                    let fy = objective(&y);
                    if fy > fx {
                        x = y;
                        fx = fy;
                        improved = true;
                        break;
                    }
                }
            }
            if !improved {
                let mut all_small = true;
                for s in steps.iter_mut() {
                    *s *= 0.5;
                    if *s > 1e-4 {
                        all_small = false;
                    }
                }
                if all_small {
                    break;
                }
            }
        }
        if fx > best.0 {
            best = (fx, x);
        }
    }
    let p: Vec<f64> = best.1.iter().map(|v| v.exp()).collect();
    spec.with_params(&p)
}

/// Predictive mean and covariance of the latent function at `horizon_times`.
pub fn gpr_predict(posterior: &GpPosterior, horizon_times: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let spec = &posterior.spec;
    let kss = gram(spec, horizon_times, horizon_times);
    let Some(chol) = &posterior.chol else {
        return (DVector::zeros(horizon_times.len()), kss);
    };
    let ks = gram(spec, &posterior.times, horizon_times);
    let mean = ks.transpose() * &posterior.alpha
        + DVector::from_element(horizon_times.len(), posterior.offset);
    let v = chol
        .solve_lower_triangular(&ks)
        .expect("Cholesky factor has a positive diagonal");
    let mut cov = kss - v.transpose() * v;
    let sym = (&cov + cov.transpose()) * 0.5;
    cov.copy_from(&sym);
    (mean, cov)
}

/// Lower-triangular `L` with `L·Lᵀ = cov + jitter·I`.
pub fn factorize(cov: &DMatrix<f64>, jitter: f64) -> Result<DMatrix<f64>, ForecastError> {
    if cov.nrows() != cov.ncols() {
        return Err(ForecastError::Dimension {
            expected: cov.nrows(),
            got: cov.ncols(),
        });
    }
    if !(jitter >= 0.0) {
        return Err(ForecastError::Input("jitter must be ≥ 0".into()));
    }
    let n = cov.nrows();
    let mut a = cov.clone();
    for i in 0..n {
        a[(i, i)] += jitter;
    }
    a.cholesky()
        .map(|c| c.l())
        .ok_or(ForecastError::Factorization { jitter })
}

/// Centred moving average; the window shrinks symmetrically near the edges.
pub fn smooth_rolling(series: &[f64], window: usize) -> Result<Vec<f64>, ForecastError> {
    if window == 0 || window % 2 == 0 {
        return Err(ForecastError::Input(format!(
            "rolling window must be a positive odd integer, got {window}"
        )));
    }
    let n = series.len();
    let half = window / 2;
    Ok((0..n)
        .map(|i| {
            let h = half.min(i).min(n - 1 - i);
            let slice = &series[i - h..=i + h];
            slice.iter().sum::<f64>() / slice.len() as f64
        })
        .collect())
}

/// Rescales so that the maximum equals `target_peak`.
pub fn scale_to_capacity(series: &[f64], target_peak: f64) -> Result<Vec<f64>, ForecastError> {
    let max = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if series.is_empty() || !(max > 0.0) {
        return Err(ForecastError::Input(
            "cannot scale a series without a positive maximum".into(),
        ));
    }
    let k = target_peak / max;
    Ok(series
        .iter()
        .map(|&v| if v == max { target_peak } else { v * k })
        .collect())
}

/// The printed 12-step reference factor `L̃` (already scaled to per-unit).
pub fn reference_factor() -> DMatrix<f64> {
    DMatrix::from_fn(12, 12, |r, c| REFERENCE_FACTOR[r][c] / REFERENCE_FACTOR_DIVISOR)
}

/// Source of the covariance factor for [`artificial_forecast`].
#[derive(Debug, Clone)]
pub enum FactorSource {
    Zero,
    /// `L̃`; the forecast stores `−L̃`.
    Matrix(DMatrix<f64>),
}

/// Sinusoidal profile `d̂_t = −d_nom(1 + 0.1 sin(2π(t−1)/T))` over
/// `t = 1..T`, with factor `−L̃` or zero.
pub fn artificial_forecast(
    d_nom: f64,
    horizon: usize,
    factor_source: &FactorSource,
) -> Result<Forecast, ForecastError> {
    artificial_forecast_with_period(d_nom, horizon, horizon as f64, factor_source)
}

/// As [`artificial_forecast`] but with an explicit sine period in hours.
pub fn artificial_forecast_with_period(
    d_nom: f64,
    horizon: usize,
    period: f64,
    factor_source: &FactorSource,
) -> Result<Forecast, ForecastError> {
    if horizon == 0 {
        return Err(ForecastError::Input("horizon must be ≥ 1".into()));
    }
    if !(period > 0.0) {
        return Err(ForecastError::Input("profile period must be positive".into()));
    }
    let mean = DVector::from_fn(horizon, |i, _| {
        let t = (i + 1) as f64;
        -d_nom * (1.0 + 0.1 * (2.0 * PI * (t - 1.0) / period).sin())
    });
    let factor = match factor_source {
        FactorSource::Zero => DMatrix::zeros(horizon, horizon),
        FactorSource::Matrix(m) => {
            if m.nrows() != horizon || m.ncols() != horizon {
                return Err(ForecastError::Dimension {
                    expected: horizon,
                    got: m.nrows(),
                });
            }
            -m.clone()
        }
    };
    Forecast::new(mean, factor)
}

/// Reads a `timestamp,power_mw` CSV (header required) and returns the power column.
pub fn read_history_csv(path: impl AsRef<Path>) -> Result<Vec<f64>, ForecastError> {
    let path = path.as_ref();
    let io = |reason: String| ForecastError::Io {
        path: path.display().to_string(),
        reason,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| io(e.to_string()))?;
    let headers = reader.headers().map_err(|e| io(e.to_string()))?.clone();
    let col = headers
        .iter()
        .position(|h| h.trim() == "power_mw")
        .ok_or_else(|| io("missing `power_mw` column".into()))?;
    if !headers.iter().any(|h| h.trim() == "timestamp") {
        return Err(io("missing `timestamp` column".into()));
    }
    let mut out = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| io(e.to_string()))?;
        let v: f64 = rec
            .get(col)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| io(format!("row {}: power_mw is not a number", row + 2)))?;
        out.push(v);
    }
    if out.is_empty() {
        return Err(io("no data rows".into()));
    }
    Ok(out)
}

/// Settings for turning a historical series into a forecast.
#[derive(Debug, Clone)]
pub struct HistoryPipeline {
    pub smoothing_window: usize,
    /// Number of trailing observations used for the fit.
    pub training_points: usize,
    pub jitter: f64,
    pub optimize: bool,
    pub fit: FitOptions,
}

impl Default for HistoryPipeline {
    fn default() -> Self {
        Self {
            smoothing_window: 5,
            training_points: 24,
            jitter: DEFAULT_JITTER,
            optimize: true,
            fit: FitOptions::default(),
        }
    }
}

/// smoothing → scaling → GP fit → prediction over `1..=horizon` → factorisation.
///
/// The last observation sits at `t = 0`. `sign` orients the result: `+1` for
/// feed-in (positive injection), `−1` for consumption.
pub fn forecast_from_history(
    series: &[f64],
    peak: f64,
    sign: f64,
    horizon: usize,
    pipeline: &HistoryPipeline,
) -> Result<(Forecast, GpPosterior), ForecastError> {
    let smoothed = smooth_rolling(series, pipeline.smoothing_window)?;
    let scaled = scale_to_capacity(&smoothed, peak)?;
    let n = pipeline.training_points.min(scaled.len()).max(1);
    let train = &scaled[scaled.len() - n..];
    let times: Vec<f64> = (0..n).map(|i| i as f64 - (n - 1) as f64).collect();
    let var = {
        let m = train.iter().sum::<f64>() / n as f64;
        train.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64
    };
    let spec = KernelSpec::periodic_trend(var);
    let posterior = gpr_fit_with(&times, train, &spec, pipeline.optimize, &pipeline.fit)?;
    let horizon_times: Vec<f64> = (1..=horizon).map(|t| t as f64).collect();
    let (mean, cov) = gpr_predict(&posterior, &horizon_times);
    let factor = factorize(&cov, pipeline.jitter)?;
    let forecast = Forecast::new(mean * sign, factor * sign)?;
    Ok((forecast, posterior))
}

/// Forecasts for one run, keyed by bus id.
///
/// Every disturbance bus needs an entry in `disturbances`; every certain load
/// needs a mean trajectory in `loads`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ForecastSet {
    pub disturbances: BTreeMap<usize, Forecast>,
    pub loads: BTreeMap<usize, DVector<f64>>,
}

impl ForecastSet {
    /// Artificial profile everywhere. Disturbances get `factor` (or zero).
    pub fn artificial(
        case: &GridCase,
        horizon: usize,
        period: f64,
        factor: Option<&DMatrix<f64>>,
    ) -> Result<Self, ForecastError> {
        let source = match factor {
            Some(m) => FactorSource::Matrix(m.clone()),
            None => FactorSource::Zero,
        };
        let mut set = ForecastSet::default();
        for d in &case.disturbances {
            let d_nom = d.d_nom.ok_or_else(|| {
                ForecastError::Input(format!(
                    "disturbance at bus {} has no nominal value",
                    case.bus_id(d.bus)
                ))
            })?;
            set.disturbances.insert(
                case.bus_id(d.bus),
                artificial_forecast_with_period(d_nom, horizon, period, &source)?,
            );
        }
        for l in &case.loads {
            let f = artificial_forecast_with_period(l.d_nom, horizon, period, &FactorSource::Zero)?;
            set.loads.insert(case.bus_id(l.bus), f.mean);
        }
        Ok(set)
    }

    /// Resolves each disturbance's `forecast` source: `artificial`, a history
    /// CSV (`timestamp,power_mw`) or a forecast JSON. Relative paths resolve
    /// against `base_dir`. Loads always follow the artificial mean profile.
    ///
    /// History series need `capacity` on the disturbance; they are oriented as
    /// feed-in unless the nominal value marks the bus as consumption.
    pub fn from_sources(
        case: &GridCase,
        horizon: usize,
        period: f64,
        factor: Option<&DMatrix<f64>>,
        base_dir: &Path,
        pipeline: &HistoryPipeline,
    ) -> Result<Self, ForecastError> {
        let mut set = ForecastSet::default();
        for l in &case.loads {
            let f = artificial_forecast_with_period(l.d_nom, horizon, period, &FactorSource::Zero)?;
            set.loads.insert(case.bus_id(l.bus), f.mean);
        }
        for d in &case.disturbances {
            let bus = case.bus_id(d.bus);
            let fc = if d.source == "artificial" {
                let d_nom = d.d_nom.ok_or_else(|| {
                    ForecastError::Input(format!("disturbance at bus {bus} has no nominal value"))
                })?;
                let source = match factor {
                    Some(m) => FactorSource::Matrix(m.clone()),
                    None => FactorSource::Zero,
                };
                artificial_forecast_with_period(d_nom, horizon, period, &source)?
            } else {
                let path = base_dir.join(&d.source);
                let is_json = path
                    .extension()
                    .is_some_and(|e| e.eq_ignore_ascii_case("json"));
                if is_json {
                    let text = std::fs::read_to_string(&path).map_err(|e| ForecastError::Io {
                        path: path.display().to_string(),
                        reason: e.to_string(),
                    })?;
                    let f = Forecast::from_json(&text)?;
                    if f.horizon() < horizon {
                        return Err(ForecastError::Dimension {
                            expected: horizon,
                            got: f.horizon(),
                        });
                    }
                    // Causal factors truncate to the leading block.
                    Forecast::new(
                        f.mean.rows(0, horizon).into_owned(),
                        f.factor.view((0, 0), (horizon, horizon)).into_owned(),
                    )?
                } else {
                    let capacity = d.capacity.ok_or_else(|| {
                        ForecastError::Input(format!(
                            "disturbance at bus {bus} reads a history series but has no capacity"
                        ))
                    })?;
                    let sign = if d.d_nom.is_some_and(|v| v > 0.0) { -1.0 } else { 1.0 };
                    let series = read_history_csv(&path)?;
                    forecast_from_history(&series, capacity, sign, horizon, pipeline)?.0
                }
            };
            set.disturbances.insert(bus, fc);
        }
        Ok(set)
    }

    pub fn horizon(&self) -> Option<usize> {
        self.disturbances
            .values()
            .map(|f| f.horizon())
            .chain(self.loads.values().map(|m| m.len()))
            .next()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn rbf(variance: f64, lengthscale: f64) -> KernelSpec {
        KernelSpec {
            components: vec![KernelComponent::Rbf {
                variance,
                lengthscale,
            }],
            noise: 0.0,
        }
    }

    #[test]
    fn kernel_components() {
        assert_eq!(kernel_eval(&rbf(1.0, 1.0), 3.0, 3.0), 1.0);
        let c = KernelSpec {
            components: vec![KernelComponent::Constant { variance: 0.5 }],
            noise: 0.0,
        };
        assert_eq!(kernel_eval(&c, 1.0, 7.5), 0.5);
        let cos = KernelSpec {
            components: vec![KernelComponent::Cosine {
                variance: 1.0,
                lengthscale: 2.0,
            }],
            noise: 0.0,
        };
        assert_abs_diff_eq!(kernel_eval(&cos, 1.0, 0.0), -1.0, epsilon = 1e-15);
        assert_eq!(kernel_eval(&cos, 0.3, 1.9), kernel_eval(&cos, 1.9, 0.3));
    }

    #[test]
    fn interpolates_single_noise_free_point() {
        let post = gpr_fit(&[0.0], &[3.0], &rbf(1.0, 1.0), false).unwrap();
        let (m, c) = gpr_predict(&post, &[0.0]);
        assert_abs_diff_eq!(m[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c[(0, 0)], 0.0, epsilon = 1e-8);
    }

    #[test]
    fn no_optimisation_keeps_hyperparameters() {
        let spec = KernelSpec::periodic_trend(1.0);
        let post = gpr_fit(&[0.0, 1.0, 2.0], &[1.0, 0.5, 0.2], &spec, false).unwrap();
        assert_eq!(post.spec, spec);
    }

    #[test]
    fn prior_prediction() {
        let spec = rbf(2.0, 3.0);
        let (m, c) = gpr_predict(&GpPosterior::prior(spec.clone()), &[1.0, 2.0]);
        assert!(m.iter().all(|&v| v == 0.0));
        assert_abs_diff_eq!(c[(0, 1)], kernel_eval(&spec, 1.0, 2.0), epsilon = 1e-15);
    }

    #[test]
    fn rejects_unsorted_times() {
        assert!(gpr_fit(&[1.0, 0.0], &[0.0, 0.0], &rbf(1.0, 1.0), false).is_err());
        assert!(gpr_fit(&[], &[], &rbf(1.0, 1.0), false).is_err());
    }

    #[test]
    fn factorize_basics() {
        let id = DMatrix::<f64>::identity(3, 3);
        assert_eq!(factorize(&id, 0.0).unwrap(), id);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let l = factorize(&d, 0.0).unwrap();
        assert_abs_diff_eq!(l[(0, 0)], 2.0);
        assert_abs_diff_eq!(l[(1, 1)], 3.0);
        assert_eq!(l[(0, 1)], 0.0);
    }

    #[test]
    fn factorize_rank_deficient_with_jitter() {
        let ones = DMatrix::from_element(2, 2, 1.0);
        assert!(matches!(
            factorize(&ones, 0.0),
            Err(ForecastError::Factorization { .. })
        ));
        let l = factorize(&ones, 1e-7).unwrap();
        assert!(l[(0, 0)] > 0.0 && l[(1, 1)] > 0.0);
        let rebuilt = &l * l.transpose();
        for r in 0..2 {
            for c in 0..2 {
                let want = 1.0 + if r == c { 1e-7 } else { 0.0 };
                assert_abs_diff_eq!(rebuilt[(r, c)], want, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn smoothing() {
        let s = smooth_rolling(&[1.0, 2.0, 3.0, 4.0, 5.0], 5).unwrap();
        assert_eq!(s[2], 3.0);
        let x = [0.3, -1.0, 7.0];
        assert_eq!(smooth_rolling(&x, 1).unwrap(), x.to_vec());
        let s = smooth_rolling(&[0.0, 0.0, 10.0, 0.0, 0.0], 3).unwrap();
        let third = 10.0 / 3.0;
        assert_eq!(s, vec![0.0, third, third, third, 0.0]);
        assert!(smooth_rolling(&x, 4).is_err());
    }

    #[test]
    fn scaling() {
        assert_eq!(scale_to_capacity(&[1.0, 2.0], 4.0).unwrap(), vec![2.0, 4.0]);
        assert_eq!(scale_to_capacity(&[1.0, 4.0], 4.0).unwrap(), vec![1.0, 4.0]);
        assert!(scale_to_capacity(&[0.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn artificial_profile() {
        let f = artificial_forecast(1.0, 24, &FactorSource::Zero).unwrap();
        assert_eq!(f.mean[0], -1.0);
        assert!(f.is_deterministic());
        let z = artificial_forecast(0.0, 24, &FactorSource::Zero).unwrap();
        assert!(z.mean.iter().all(|&v| v == 0.0));
        assert_abs_diff_eq!(reference_factor()[(0, 0)], 87e-4, epsilon = 1e-18);
        let f = artificial_forecast(1.0, 12, &FactorSource::Matrix(reference_factor())).unwrap();
        assert_abs_diff_eq!(f.factor[(0, 0)], -87e-4, epsilon = 1e-18);
        assert!(matches!(
            artificial_forecast(1.0, 24, &FactorSource::Matrix(reference_factor())),
            Err(ForecastError::Dimension { .. })
        ));
    }

    #[test]
    fn forecast_rejects_acausal_factor() {
        let mut l = DMatrix::zeros(2, 2);
        l[(0, 1)] = 1.0;
        assert!(Forecast::new(DVector::zeros(2), l).is_err());
    }

    #[test]
    fn forecast_json_roundtrip() {
        let f = artificial_forecast(0.4, 12, &FactorSource::Matrix(reference_factor())).unwrap();
        let back = Forecast::from_json(&f.to_json()).unwrap();
        assert_eq!(back, f);
    }
}
