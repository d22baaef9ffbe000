//! Experiment runner for i2c: configuration, the LQR equivalence check,
//! trajectory optimization and controller evaluation.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod experiments;

use std::path::Path;

pub use config::{resolve, ExperimentConfig, ExperimentKind};
pub use error::{CliError, CliResult};
pub use experiments::{TrajoptOutcome, TrajoptRun};

pub fn run_lqr_equiv(config: &ExperimentConfig, out: &Path) -> CliResult<experiments::GainDiff> {
    artifacts::prepare_dir(out)?;
    artifacts::write_config(out, config)?;
    let outcome = experiments::lqr_equiv(config)?;
    artifacts::write_lqr_equiv(out, &outcome)?;
    Ok(outcome.diff)
}

pub fn run_trajopt(config: &ExperimentConfig, out: &Path) -> CliResult<Box<TrajoptOutcome>> {
    artifacts::prepare_dir(out)?;
    artifacts::write_config(out, config)?;
    match experiments::trajopt(config)? {
        TrajoptRun::Finished(outcome) => {
            artifacts::write_trajopt(out, &outcome)?;
            Ok(outcome)
        }
        TrajoptRun::Failed { status, error } => {
            artifacts::write_status(out, &status)?;
            Err(CliError::Numerical(error))
        }
    }
}

pub fn run_eval(config: &ExperimentConfig, controller_path: &Path, out: &Path) -> CliResult<i2c_core::sim::EvalReport> {
    artifacts::prepare_dir(out)?;
    artifacts::write_config(out, config)?;
    let controller = artifacts::read_controller(controller_path)?;
    let report = experiments::eval(config, &controller, artifacts::sibling_predicted_cost(controller_path))?;
    artifacts::write_eval(out, &report)?;
    Ok(report)
}
