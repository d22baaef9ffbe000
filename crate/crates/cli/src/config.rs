//! Layered experiment configuration addressed by dotted keys such as
//! `em.alpha_init`. Layers apply in order: registry defaults, the config file,
//! then command-line overrides.

use std::collections::BTreeMap;
use std::path::Path;

use i2c_core::engine::{EmConfig, Linearization, Priors, TerminalMode};
use i2c_core::gaussian::GaussianMoment;
use i2c_core::linalg::{Mat, Vector};
use i2c_core::models::{make_env, EnvOverrides, Environment, ObservationModel};
use i2c_core::sim::RolloutOptions;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    LqrEquiv,
    Trajopt,
    Eval,
}

/// A matrix written either in full (rows) or as its diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixValue {
    Full(Vec<Vec<f64>>),
    Diagonal(Vec<f64>),
}

impl MatrixValue {
    pub fn from_mat(m: &Mat) -> Self {
        MatrixValue::Full(m.row_iter().map(|r| r.iter().copied().collect()).collect())
    }

    pub fn to_mat(&self, key: &str, n: usize) -> CliResult<Mat> {
        match self {
            MatrixValue::Diagonal(d) if d.len() == n => Ok(Mat::from_diagonal(&Vector::from_column_slice(d))),
            MatrixValue::Full(rows) if rows.len() == n && rows.iter().all(|r| r.len() == n) => Ok(Mat::from_fn(n, n, |i, j| rows[i][j])),
            _ => Err(CliError::config(format!("{key} must be {n}x{n} or a diagonal of length {n}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalModeName {
    QfEqualsQ,
    KappaScale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub env: EnvSection,
    pub cost: CostSection,
    pub priors: PriorSection,
    pub em: EmSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    pub name: String,
    pub horizon: usize,
    pub dt: f64,
    pub noise_cov: MatrixValue,
}

/// Θ, z_g and the terminal weight, all in feature space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    pub target: Vec<f64>,
    pub weight: MatrixValue,
    pub terminal_weight: MatrixValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSection {
    pub x0_mean: Vec<f64>,
    pub x0_var: f64,
    pub u_mean: Vec<f64>,
    pub u_var: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmSection {
    pub alpha_init: f64,
    pub delta_alpha_inv: f64,
    pub terminal_mode: TerminalModeName,
    pub kappa: f64,
    pub max_iters: usize,
    pub convergence_tol: f64,
    pub patience: usize,
    pub input_jitter: f64,
    pub linearization: Linearization,
    pub update_alpha: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub trials: usize,
    pub process_noise: bool,
    pub sample_inputs: bool,
}

struct Tuning {
    u_var: f64,
    alpha_init: f64,
    delta_alpha_inv: f64,
    max_iters: usize,
    input_jitter: f64,
    update_alpha: bool,
}

fn tuning(env: &str) -> Tuning {
    match env {
        "pendulum" => Tuning { u_var: 0.2, alpha_init: 0.01, delta_alpha_inv: 0.99, max_iters: 150, input_jitter: 0.0, update_alpha: true },
        "cartpole" => {
            Tuning { u_var: 0.25, alpha_init: 1.0 / 67.0, delta_alpha_inv: 0.993, max_iters: 200, input_jitter: 1e-3, update_alpha: true }
        }
        "double_cartpole" => {
            Tuning { u_var: 0.04, alpha_init: 1.0 / 90.0, delta_alpha_inv: 0.9995, max_iters: 1500, input_jitter: 1e-2, update_alpha: true }
        }
        _ => Tuning { u_var: 100.0, alpha_init: 1e5, delta_alpha_inv: 1.0, max_iters: 1, input_jitter: 0.0, update_alpha: false },
    }
}

/// Every key filled from the environment registry.
pub fn defaults(kind: ExperimentKind, env_name: &str) -> CliResult<ExperimentConfig> {
    let env = make_env(env_name, &EnvOverrides::default()).map_err(CliError::config)?;
    let model = env.observation_model();
    let tune = tuning(env_name);
    Ok(ExperimentConfig {
        experiment: kind,
        seed: 0,
        env: EnvSection {
            name: env_name.to_string(),
            horizon: env.horizon(),
            dt: env.dt(),
            noise_cov: MatrixValue::from_mat(env.noise_cov()),
        },
        cost: CostSection {
            target: model.target.iter().copied().collect(),
            weight: MatrixValue::from_mat(&model.weight),
            terminal_weight: MatrixValue::from_mat(model.weight_at(true)),
        },
        priors: PriorSection {
            x0_mean: env.initial_state().iter().copied().collect(),
            x0_var: 1e-8,
            u_mean: vec![0.0; env.input_dim()],
            u_var: tune.u_var,
        },
        em: EmSection {
            alpha_init: tune.alpha_init,
            delta_alpha_inv: tune.delta_alpha_inv,
            terminal_mode: TerminalModeName::QfEqualsQ,
            kappa: 10.0,
            max_iters: tune.max_iters,
            convergence_tol: 0.0,
            patience: 3,
            input_jitter: tune.input_jitter,
            linearization: Linearization::Forward,
            update_alpha: tune.update_alpha,
        },
        eval: EvalSection { trials: 100, process_noise: true, sample_inputs: false },
    })
}

fn flatten(prefix: &str, table: &Table, out: &mut BTreeMap<String, Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

fn unflatten(keys: BTreeMap<String, Value>) -> CliResult<Table> {
    let mut root = Table::new();
    for (key, value) in keys {
        let mut parts: Vec<&str> = key.split('.').collect();
        let leaf = parts.pop().expect("split yields one part");
        let mut node = &mut root;
        for p in parts {
            node = match node.entry(p).or_insert_with(|| Value::Table(Table::new())) {
                Value::Table(t) => t,
                _ => return Err(CliError::config(format!("key {key} nests under a value"))),
            };
        }
        node.insert(leaf.to_string(), value);
    }
    Ok(root)
}

/// Reads `text` as a TOML value, falling back to a bare string.
pub fn parse_value(text: &str) -> Value {
    format!("v = {text}").parse::<Table>().ok().and_then(|mut t| t.remove("v")).unwrap_or_else(|| Value::String(text.to_string()))
}

/// Splits `key=value`.
pub fn parse_assignment(text: &str) -> CliResult<(String, String)> {
    let (k, v) = text.split_once('=').ok_or_else(|| CliError::config(format!("expected key=value, got '{text}'")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn read_file(path: &Path) -> CliResult<BTreeMap<String, Value>> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Read { path: path.to_path_buf(), source })?;
    let table: Table = text.parse().map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let mut keys = BTreeMap::new();
    flatten("", &table, &mut keys);
    Ok(keys)
}

/// Resolve the configuration of one run.
///
/// `env_name` from the command line wins over `env.name` in the overrides or
/// the file. `lqr-equiv` defaults to the linear test system.
pub fn resolve(
    kind: ExperimentKind,
    env_name: Option<&str>,
    file: Option<&Path>,
    overrides: &[(String, String)],
) -> CliResult<ExperimentConfig> {
    let from_file = match file {
        Some(p) => read_file(p)?,
        None => BTreeMap::new(),
    };
    let from_flags: Vec<(String, Value)> = overrides.iter().map(|(k, v)| (k.clone(), parse_value(v))).collect();
    let named = |v: &Value| v.as_str().map(str::to_string);
    let name = env_name
        .map(str::to_string)
        .or_else(|| from_flags.iter().rev().find(|(k, _)| k == "env.name").and_then(|(_, v)| named(v)))
        .or_else(|| from_file.get("env.name").and_then(named))
        .or_else(|| (kind == ExperimentKind::LqrEquiv).then(|| "linear_c1".to_string()))
        .ok_or_else(|| CliError::config("no environment given"))?;

    let base = Value::try_from(defaults(kind, &name)?).map_err(CliError::config)?;
    let mut keys = BTreeMap::new();
    flatten("", base.as_table().expect("config serializes to a table"), &mut keys);
    for (k, v) in from_file.into_iter().chain(from_flags) {
        if !keys.contains_key(&k) {
            return Err(CliError::config(format!("unknown key '{k}'")));
        }
        keys.insert(k, v);
    }
    keys.insert("experiment".into(), Value::try_from(kind).map_err(CliError::config)?);
    keys.insert("env.name".into(), Value::String(name));

    let config: ExperimentConfig = Value::Table(unflatten(keys)?).try_into().map_err(CliError::config)?;
    config.validate()?;
    Ok(config)
}

impl ExperimentConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn environment(&self) -> CliResult<Box<dyn Environment>> {
        let registry = make_env(&self.env.name, &EnvOverrides::default()).map_err(CliError::config)?;
        let n = registry.state_dim();
        let d = registry.observation_model().dim();
        let dt = if self.env.dt != registry.dt() {
            if self.env.name == "linear_c1" {
                return Err(CliError::config("env.dt is fixed for linear_c1"));
            }
            Some(self.env.dt)
        } else {
            None
        };
        if self.cost.target.len() != d {
            return Err(CliError::config(format!("cost.target must have {d} entries")));
        }
        let overrides = EnvOverrides {
            dt,
            horizon: Some(self.env.horizon),
            substeps: None,
            noise_cov: Some(self.env.noise_cov.to_mat("env.noise_cov", n)?),
            target: Some(Vector::from_column_slice(&self.cost.target)),
            weight: Some(self.cost.weight.to_mat("cost.weight", d)?),
        };
        make_env(&self.env.name, &overrides).map_err(CliError::config)
    }

    /// Cost model of `env` with the configured terminal weight.
    pub fn observation_model(&self, env: &dyn Environment) -> CliResult<ObservationModel> {
        let model = env.observation_model();
        let terminal = self.cost.terminal_weight.to_mat("cost.terminal_weight", model.dim())?;
        if &terminal == model.weight_at(true) {
            return Ok(model);
        }
        model.with_terminal_weight(terminal).map_err(CliError::config)
    }

    pub fn priors(&self, env: &dyn Environment) -> CliResult<Priors> {
        let (n, m) = (env.state_dim(), env.input_dim());
        let p = &self.priors;
        if p.x0_mean.len() != n || p.u_mean.len() != m {
            return Err(CliError::config(format!("priors.x0_mean needs {n} entries and priors.u_mean {m}")));
        }
        if p.x0_var.is_nan() || p.x0_var < 0.0 || p.u_var.is_nan() || p.u_var <= 0.0 {
            return Err(CliError::config("priors.x0_var must be non-negative and priors.u_var positive"));
        }
        let x0 = GaussianMoment::isotropic(Vector::from_column_slice(&p.x0_mean), p.x0_var);
        let u = GaussianMoment::isotropic(Vector::from_column_slice(&p.u_mean), p.u_var);
        Priors::new(x0, vec![u; env.horizon() + 1]).map_err(CliError::config)
    }

    pub fn em_config(&self) -> EmConfig {
        let em = &self.em;
        EmConfig {
            alpha_init: em.alpha_init,
            delta_alpha_inv: em.delta_alpha_inv,
            terminal_mode: match em.terminal_mode {
                TerminalModeName::QfEqualsQ => TerminalMode::QfEqualsQ,
                TerminalModeName::KappaScale => TerminalMode::KappaScale { kappa: em.kappa },
            },
            max_iters: em.max_iters,
            convergence_tol: em.convergence_tol,
            patience: em.patience,
            seed: self.seed,
            input_jitter: em.input_jitter,
            linearization: em.linearization,
            update_alpha: em.update_alpha,
            keep_history: false,
        }
    }

    pub fn rollout_options(&self) -> RolloutOptions {
        RolloutOptions { process_noise: self.eval.process_noise, sample_inputs: self.eval.sample_inputs }
    }

    pub fn validate(&self) -> CliResult<()> {
        self.em_config().validate().map_err(CliError::config)?;
        if self.eval.trials == 0 {
            return Err(CliError::config("eval.trials must be at least 1"));
        }
        if self.env.horizon == 0 {
            return Err(CliError::config("env.horizon must be at least 1"));
        }
        if self.experiment == ExperimentKind::LqrEquiv && self.env.name != "linear_c1" {
            return Err(CliError::config("lqr-equiv runs on linear_c1 only"));
        }
        let env = self.environment()?;
        self.observation_model(env.as_ref())?;
        self.priors(env.as_ref())?;
        Ok(())
    }
}
