use std::path::{Path, PathBuf};

use stochopf::forecast::{reference_factor, ForecastSet, HistoryPipeline};
use stochopf::moments::Balancing;
use stochopf::netcase::{load_case, GridCase};
use stochopf::socp::{Scenario, ScenarioConfig};
use stochopf::solve::SolverOptions;

use crate::RunError;

/// Environment variable overriding the solver's feasibility and gap tolerances.
pub const SOLVER_TOL_ENV: &str = "STOCHOPF_SOLVER_TOL";

/// Horizon of the printed reference factor.
pub const REFERENCE_HORIZON: usize = 12;

/// Where disturbance forecasts come from.
#[derive(Debug, Clone, PartialEq)]
pub enum ForecastChoice {
    /// Each disturbance's own `forecast` entry in the case file.
    FromCase,
    /// Artificial profile for every disturbance.
    Artificial,
    /// One history CSV or forecast JSON used for every disturbance.
    Path(PathBuf),
}

impl std::str::FromStr for ForecastChoice {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "case" => ForecastChoice::FromCase,
            "artificial" => ForecastChoice::Artificial,
            p => ForecastChoice::Path(PathBuf::from(p)),
        })
    }
}

/// `(N_d, N_s)` points crossed with risk levels and balancing modes.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepAxes {
    pub points: Vec<(usize, usize)>,
    pub epsilons: Vec<f64>,
    pub balancings: Vec<Balancing>,
}

impl SweepAxes {
    /// Parses `"1:1,2:1,3:1"`.
    pub fn parse_points(s: &str) -> Result<Vec<(usize, usize)>, RunError> {
        s.split(',')
            .filter(|p| !p.trim().is_empty())
            .map(|p| {
                let (d, st) = p
                    .split_once(':')
                    .ok_or_else(|| RunError::Manifest(format!("sweep point `{p}` is not N_d:N_s")))?;
                let parse = |v: &str| {
                    v.trim()
                        .parse::<usize>()
                        .map_err(|_| RunError::Manifest(format!("sweep point `{p}` is not N_d:N_s")))
                };
                Ok((parse(d)?, parse(st)?))
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.points.len() * self.epsilons.len() * self.balancings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub struct RunManifest {
    pub case: PathBuf,
    pub forecast: ForecastChoice,
    pub scenario: Scenario,
    pub epsilon: f64,
    pub balancing: Balancing,
    pub horizon: usize,
    /// Period of the artificial sinusoid, in steps.
    pub period: f64,
    pub samples: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub sweep: Option<SweepAxes>,
    pub jobs: usize,
    pub solver: SolverOptions,
}

impl RunManifest {
    pub fn new(case: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        Self {
            case: case.into(),
            forecast: ForecastChoice::FromCase,
            scenario: Scenario::S2,
            epsilon: 0.05,
            balancing: Balancing::Local,
            horizon: REFERENCE_HORIZON,
            period: 24.0,
            samples: 10_000,
            seed: 1,
            out: out.into(),
            sweep: None,
            jobs: 1,
            solver: SolverOptions::default(),
        }
    }

    /// Applies `STOCHOPF_SOLVER_TOL` if set.
    pub fn with_env_tolerance(mut self) -> Result<Self, RunError> {
        if let Ok(v) = std::env::var(SOLVER_TOL_ENV) {
            let tol: f64 = v
                .trim()
                .parse()
                .map_err(|_| RunError::Manifest(format!("{SOLVER_TOL_ENV}={v} is not a number")))?;
            if !(tol > 0.0) {
                return Err(RunError::Manifest(format!("{SOLVER_TOL_ENV} must be positive")));
            }
            let verbose = self.solver.verbose;
            self.solver = SolverOptions::with_tolerance(tol);
            self.solver.verbose = verbose;
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), RunError> {
        if !self.case.is_file() {
            return Err(RunError::MissingFile(self.case.clone()));
        }
        if let ForecastChoice::Path(p) = &self.forecast {
            if !p.is_file() {
                return Err(RunError::MissingFile(p.clone()));
            }
        }
        if self.horizon == 0 {
            return Err(RunError::Manifest("horizon must be at least 1".into()));
        }
        if !(self.period > 0.0) {
            return Err(RunError::Manifest("period must be positive".into()));
        }
        if let Some(axes) = &self.sweep {
            if axes.is_empty() {
                return Err(RunError::Manifest("sweep axes are empty".into()));
            }
            if axes.points.iter().any(|&(d, _)| d == 0) {
                return Err(RunError::Manifest("sweep needs at least one disturbance per point".into()));
            }
        }
        if self.jobs == 0 {
            return Err(RunError::Manifest("jobs must be at least 1".into()));
        }
        Ok(())
    }

    pub fn config(&self) -> ScenarioConfig {
        ScenarioConfig::new(self.scenario, self.horizon)
            .with_balancing(self.balancing)
            .with_epsilon(self.epsilon)
    }

    /// Loads the case with the forecast override applied to its disturbances.
    pub fn load_case(&self) -> Result<GridCase, RunError> {
        if !self.case.is_file() {
            return Err(RunError::MissingFile(self.case.clone()));
        }
        let mut case = load_case(&self.case)?;
        match &self.forecast {
            ForecastChoice::FromCase => {}
            ForecastChoice::Artificial => {
                for d in &mut case.disturbances {
                    d.source = "artificial".into();
                }
            }
            ForecastChoice::Path(p) => {
                if !p.is_file() {
                    return Err(RunError::MissingFile(p.clone()));
                }
                let abs = std::fs::canonicalize(p).map_err(|_| RunError::MissingFile(p.clone()))?;
                for d in &mut case.disturbances {
                    d.source = abs.display().to_string();
                }
            }
        }
        Ok(case)
    }

    /// Forecasts for `case`. Artificial disturbances use the printed reference
    /// factor at its native horizon and a zero factor otherwise.
    pub fn forecasts(&self, case: &GridCase) -> Result<ForecastSet, RunError> {
        let base = self.case.parent().unwrap_or(Path::new("."));
        for d in &case.disturbances {
            if d.source != "artificial" {
                let p = base.join(&d.source);
                if !p.is_file() {
                    return Err(RunError::MissingFile(p));
                }
            }
        }
        let factor = (self.horizon == REFERENCE_HORIZON).then(reference_factor);
        Ok(ForecastSet::from_sources(
            case,
            self.horizon,
            self.period,
            factor.as_ref(),
            base,
            &HistoryPipeline::default(),
        )?)
    }
}
