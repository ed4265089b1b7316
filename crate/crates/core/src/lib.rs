//! Chance-constrained multi-period DC optimal power flow with storage.
//!
//! The pipeline is: [`netcase`] (grid data, PTDF) → [`forecast`] (Gaussian
//! forecasts) → [`moments`] (affine random quantities) → [`socp`] (conic
//! program) → [`solve`] (backend, policy extraction) → [`validate`]
//! (Monte Carlo checks).

pub mod expr;
pub mod forecast;
pub mod moments;
pub mod netcase;
pub mod socp;
pub mod solve;
pub mod validate;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Case(#[from] netcase::CaseError),
    #[error(transparent)]
    Forecast(#[from] forecast::ForecastError),
    #[error(transparent)]
    Build(#[from] socp::BuildError),
}
