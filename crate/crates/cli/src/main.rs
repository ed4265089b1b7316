use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use stochopf::forecast::HistoryPipeline;
use stochopf::moments::Balancing;
use stochopf::socp::Scenario;
use stochopf_cli::fit::fit_forecasts;
use stochopf_cli::manifest::{ForecastChoice, RunManifest, SweepAxes};
use stochopf_cli::run::{describe, run_scenario};
use stochopf_cli::sweep::run_sweep;
use stochopf_cli::RunError;

#[derive(Parser)]
#[command(name = "stochopf", version, about = "Chance-constrained multi-period DC-OPF with storage")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one scenario and validate it by Monte Carlo.
    Run(RunArgs),
    /// Solve a grid of (N_d, N_s, balancing, epsilon) points.
    Sweep(SweepArgs),
    /// Fit GP forecasts for disturbances backed by history CSVs.
    FitForecasts(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    #[arg(long)]
    case: PathBuf,
    /// `case`, `artificial`, or a history CSV / forecast JSON path.
    #[arg(long, default_value = "case")]
    forecast: ForecastChoice,
    #[arg(long, default_value_t = 12)]
    horizon: usize,
    /// Period of the artificial profile, in steps.
    #[arg(long, default_value_t = 24.0)]
    period: f64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Print solver progress.
    #[arg(long)]
    verbose: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, default_value = "s2")]
    scenario: Scenario,
    #[arg(long, default_value_t = 0.05)]
    epsilon: f64,
    #[arg(long, default_value = "local")]
    balancing: Balancing,
    /// Monte Carlo samples; 0 skips validation.
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, default_value = "s2")]
    scenario: Scenario,
    /// Points as `N_d:N_s`, comma separated.
    #[arg(long)]
    sweep: String,
    #[arg(long, value_delimiter = ',', default_value = "0.05")]
    epsilon: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "local")]
    balancing: Vec<Balancing>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn manifest(c: &CommonArgs) -> Result<RunManifest> {
    let mut m = RunManifest::new(&c.case, &c.out);
    m.forecast = c.forecast.clone();
    m.horizon = c.horizon;
    m.period = c.period;
    m.solver.verbose = c.verbose;
    Ok(m.with_env_tolerance()?)
}

fn exec(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(a) => {
            let mut m = manifest(&a.common)?;
            m.scenario = a.scenario;
            m.epsilon = a.epsilon;
            m.balancing = a.balancing;
            m.samples = a.samples;
            m.seed = a.seed;
            let out = run_scenario(&m)?;
            println!(
                "{} {} {} eps={} T={}: {} objective {:.6} in {:.2}s",
                out.costs.case,
                out.costs.scenario,
                out.costs.balancing,
                out.costs.epsilon,
                out.costs.horizon,
                out.costs.status,
                out.costs.objective,
                out.costs.solve_time
            );
            if let Some(v) = &out.validation {
                println!(
                    "validation: {} ({} samples, worst violation rate {:.4})",
                    if v.pass { "pass" } else { "FAIL" },
                    v.samples,
                    v.worst_violation_rate()
                );
            }
            for f in &out.files {
                println!("wrote {}", f.display());
            }
        }
        Command::Sweep(a) => {
            let mut m = manifest(&a.common)?;
            m.scenario = a.scenario;
            m.jobs = a.jobs;
            m.sweep = Some(SweepAxes {
                points: SweepAxes::parse_points(&a.sweep)?,
                epsilons: a.epsilon,
                balancings: a.balancing,
            });
            let rows = run_sweep(&m)?;
            println!("n_d n_s balancing epsilon vars time objective status");
            for r in &rows {
                println!(
                    "{} {} {} {} {} {:.3} {:.6} {}",
                    r.n_d, r.n_s, r.balancing, r.epsilon, r.policy_variables, r.solve_time, r.objective, r.status
                );
            }
            println!("wrote {}", m.out.join("sweep.csv").display());
        }
        Command::FitForecasts(c) => {
            let m = manifest(&c)?;
            let fits = fit_forecasts(&m, &HistoryPipeline::default())?;
            for f in &fits {
                println!(
                    "bus {}: log marginal likelihood {:.4} -> {}",
                    f.bus,
                    f.log_marginal_likelihood,
                    f.forecast_file.display()
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match exec(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(RunError::NotOptimal { status, report }) = e.downcast_ref::<RunError>() {
                eprintln!("error: solver status {status}");
                eprintln!("screening: {}", describe(report));
                return ExitCode::from(2);
            }
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

