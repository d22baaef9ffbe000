//! Plot-ready output files. CSV files have a header row; floats are written in
//! shortest round-trip form.

use std::fs;
use std::path::{Path, PathBuf};

use i2c_core::controller::LinearGaussianController;
use i2c_core::engine::TraceRecord;
use i2c_core::sim::EvalReport;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::experiments::{LqrEquivOutcome, Trajectory, TrajoptOutcome, TrajoptStatus};

pub const CONFIG_ECHO: &str = "config.toml";

fn num(x: f64) -> String {
    format!("{x:?}")
}

fn write(dir: &Path, name: &str, contents: &[u8]) -> CliResult<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| CliError::Write { path: path.clone(), source })?;
    Ok(path)
}

pub fn prepare_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|source| CliError::Write { path: dir.to_path_buf(), source })
}

fn csv_bytes(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    text.into_bytes()
}

pub fn write_config(dir: &Path, config: &ExperimentConfig) -> CliResult<PathBuf> {
    write(dir, CONFIG_ECHO, config.to_toml().as_bytes())
}

/// Columns `t, K_i_j…, k_i…`.
pub fn gains_csv(controller: &LinearGaussianController) -> Vec<u8> {
    let (n, m) = (controller.state_dim(), controller.input_dim());
    let mut header = vec!["t".to_string()];
    header.extend((0..m).flat_map(|i| (0..n).map(move |j| format!("K_{i}_{j}"))));
    header.extend((0..m).map(|i| format!("k_{i}")));
    let rows = controller.steps.iter().enumerate().map(|(t, s)| {
        let mut row = vec![t.to_string()];
        row.extend((0..m).flat_map(|i| (0..n).map(move |j| num(s.K[(i, j)]))));
        row.extend(s.k.iter().map(|&v| num(v)));
        row
    });
    csv_bytes(&header, rows)
}

pub fn convergence_csv(trace: &[TraceRecord]) -> Vec<u8> {
    let header = ["iteration", "predicted_cost", "alpha", "nll"].map(String::from);
    let rows = trace.iter().map(|r| vec![r.iteration.to_string(), num(r.predicted_cost), num(r.alpha), num(r.nll)]);
    csv_bytes(&header, rows)
}

pub fn trajectory_csv(traj: &Trajectory) -> Vec<u8> {
    let n = traj.states.first().map_or(0, |x| x.len());
    let m = traj.inputs.first().map_or(0, |u| u.len());
    let mut header = vec!["t".to_string()];
    header.extend((0..n).map(|i| format!("x_{i}")));
    header.extend((0..m).map(|i| format!("u_{i}")));
    header.push("cost".into());
    let rows = traj.states.iter().zip(&traj.inputs).zip(&traj.costs).enumerate().map(|(t, ((x, u), c))| {
        let mut row = vec![t.to_string()];
        row.extend(x.iter().chain(u.iter()).map(|&v| num(v)));
        row.push(num(*c));
        row
    });
    csv_bytes(&header, rows)
}

pub fn trials_csv(report: &EvalReport) -> Vec<u8> {
    let header = ["trial", "cost"].map(String::from);
    csv_bytes(&header, report.evaluated_costs.iter().enumerate().map(|(i, c)| vec![i.to_string(), num(*c)]))
}

pub fn write_lqr_equiv(dir: &Path, outcome: &LqrEquivOutcome) -> CliResult<()> {
    write(dir, "gains_lqr.csv", &gains_csv(&outcome.lqr))?;
    write(dir, "gains_i2c.csv", &gains_csv(&outcome.i2c))?;
    write(dir, "gain_diff.json", &json_bytes(&outcome.diff))?;
    Ok(())
}

pub fn write_trajopt(dir: &Path, outcome: &TrajoptOutcome) -> CliResult<()> {
    write(dir, "convergence.csv", &convergence_csv(&outcome.result.trace))?;
    write(dir, "trajectory.csv", &trajectory_csv(&outcome.trajectory))?;
    let mut controller = outcome.result.controller.to_json();
    controller.push('\n');
    write(dir, "controller.json", controller.as_bytes())?;
    write_status(dir, &outcome.status)?;
    Ok(())
}

pub fn write_status(dir: &Path, status: &TrajoptStatus) -> CliResult<()> {
    write(dir, "status.json", &json_bytes(status)).map(|_| ())
}

pub fn write_eval(dir: &Path, report: &EvalReport) -> CliResult<()> {
    write(dir, "eval.json", &json_bytes(report))?;
    write(dir, "trials.csv", &trials_csv(report))?;
    Ok(())
}

pub fn read_controller(path: &Path) -> CliResult<LinearGaussianController> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Read { path: path.to_path_buf(), source })?;
    LinearGaussianController::from_json(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

/// Predicted cost from the `status.json` written next to a controller by
/// `trajopt`, if there is one.
pub fn sibling_predicted_cost(controller_path: &Path) -> Option<f64> {
    let status = controller_path.parent()?.join("status.json");
    let text = fs::read_to_string(status).ok()?;
    serde_json::from_str::<TrajoptStatus>(&text).ok()?.predicted_cost
}
