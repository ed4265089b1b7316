use std::fs;
use std::path::PathBuf;

use serde::Serialize;
use stochopf::forecast::{forecast_from_history, read_history_csv, HistoryPipeline};

use crate::manifest::RunManifest;
use crate::run::write_json;
use crate::RunError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitSummary {
    pub bus: usize,
    pub source: String,
    pub capacity: f64,
    pub horizon: usize,
    pub log_marginal_likelihood: f64,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub forecast_file: PathBuf,
}

/// Fits a forecast for every disturbance backed by a history CSV and writes
/// `forecast_bus{id}.json` plus `fit_summary.json`.
pub fn fit_forecasts(manifest: &RunManifest, pipeline: &HistoryPipeline) -> Result<Vec<FitSummary>, RunError> {
    manifest.validate()?;
    let case = manifest.load_case()?;
    let base = manifest.case.parent().map(PathBuf::from).unwrap_or_default();
    fs::create_dir_all(&manifest.out).map_err(|e| RunError::io(&manifest.out, e))?;
    let mut out = Vec::new();
    for d in &case.disturbances {
        let src = base.join(&d.source);
        let is_csv = src.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
        if d.source == "artificial" || !is_csv {
            continue;
        }
        if !src.is_file() {
            return Err(RunError::MissingFile(src));
        }
        let bus = case.bus_id(d.bus);
        let capacity = d
            .capacity
            .ok_or_else(|| RunError::Manifest(format!("disturbance at bus {bus} has no capacity")))?;
        let sign = if d.d_nom.is_some_and(|v| v > 0.0) { -1.0 } else { 1.0 };
        let series = read_history_csv(&src)?;
        let (forecast, posterior) = forecast_from_history(&series, capacity, sign, manifest.horizon, pipeline)?;
        let path = manifest.out.join(format!("forecast_bus{bus}.json"));
        fs::write(&path, forecast.to_json()).map_err(|e| RunError::io(&path, e))?;
        out.push(FitSummary {
            bus,
            source: d.source.clone(),
            capacity,
            horizon: manifest.horizon,
            log_marginal_likelihood: posterior.log_marginal_likelihood(),
            mean: forecast.mean.iter().copied().collect(),
            std: forecast.variance().iter().map(|v| v.max(0.0).sqrt()).collect(),
            forecast_file: path,
        });
    }
    if out.is_empty() {
        return Err(RunError::Manifest(format!(
            "{} has no disturbance backed by a history CSV",
            case.name
        )));
    }
    write_json(&manifest.out.join("fit_summary.json"), &out)?;
    Ok(out)
}
