//! Monte Carlo estimators for currents, defects and second class particles,
//! each compared with its exact or limiting target.

mod checks;
mod runs;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::coupling::CouplingError;
use crate::dynamics::DynamicsError;
use crate::equilibrium::{self, build_marginal, EquilibriumError, Marginal, MomentTable, DEFAULT_EPS};
use crate::models::{builtin, Family, ModelError, ModelParams, ModelSpec};
use crate::oracle::OracleError;

pub use crate::stats::{Estimate, RunningStats};
pub use checks::*;
pub use runs::*;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Coupling(#[from] CouplingError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

pub type Result<T> = std::result::Result<T, EstimatorError>;

fn default_v() -> Vec<f64> {
    vec![0.0]
}
fn default_replicas() -> usize {
    1000
}
fn default_len() -> usize {
    64
}
fn default_groups() -> usize {
    50
}
fn default_ks() -> f64 {
    0.05
}

/// One experiment: a model, a ring, observation times and sample sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub family: Family,
    #[serde(flatten)]
    pub params: ModelParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    /// Alternative to `theta`: the density ρ.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta2: Option<f64>,
    #[serde(rename = "L", default = "default_len")]
    pub len: usize,
    #[serde(default)]
    pub t: Vec<f64>,
    #[serde(rename = "V", default = "default_v")]
    pub v: Vec<f64>,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default)]
    pub seed: u64,
    /// Space lags for correlation checks.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub n: Vec<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_max: Option<i64>,
    /// Checks executed by `run`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub checks: Vec<String>,
    /// Sandwich mode for `sandwich` checks: upper, lower or both.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    /// Require L divisible by 3, as for comparisons with exact ring results.
    #[serde(default)]
    pub oracle: bool,
    /// Relative tolerance for `variance` rows with a nonzero target; replaces
    /// the 3σ rule there.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rel_tol: Option<f64>,
    #[serde(default = "default_ks")]
    pub ks_max: f64,
    /// Jackknife groups.
    #[serde(default = "default_groups")]
    pub groups: usize,
}

const KNOWN_KEYS: &[&str] = &[
    "family", "c", "a", "beta", "f_table", "rate_table", "omega_min", "omega_max", "theta", "rho", "theta1",
    "theta2", "L", "t", "V", "replicas", "seed", "n", "n_max", "checks", "mode", "oracle", "rel_tol", "ks_max",
    "groups",
];

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| EstimatorError::Config(format!("malformed JSON at line {} column {}: {e}", e.line(), e.column())))?;
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> Result<Self> {
        let obj = value.as_object().ok_or_else(|| EstimatorError::Config("config must be a JSON object".into()))?;
        if let Some(k) = obj.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
            return Err(EstimatorError::Config(format!("unknown key '{k}'")));
        }
        let cfg: ExperimentConfig =
            serde_json::from_value(value).map_err(|e| EstimatorError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn t_max(&self) -> f64 {
        self.t.iter().cloned().fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(EstimatorError::Config(m));
        if self.len < 2 {
            return bad(format!("L must be at least 2, got {}", self.len));
        }
        if self.replicas < 2 {
            return bad("replicas must be at least 2".into());
        }
        if self.t.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return bad("times must be finite and nonnegative".into());
        }
        if self.theta.is_some() && self.rho.is_some() {
            return bad("give theta or rho, not both".into());
        }
        let t_max = self.t_max();
        for v in &self.v {
            if v.abs() * t_max >= self.len as f64 / 2.0 {
                return bad(format!("|V| t = {} must stay below L/2 = {}", v.abs() * t_max, self.len as f64 / 2.0));
            }
        }
        if self.oracle && !self.len.is_multiple_of(3) {
            return bad(format!("L = {} must be divisible by 3 for exact comparisons", self.len));
        }
        if self.groups < 2 {
            return bad("groups must be at least 2".into());
        }
        Ok(())
    }

    pub fn spec(&self) -> Result<ModelSpec> {
        Ok(builtin(self.family, &self.params)?)
    }

    pub fn resolve(&self) -> Result<ResolvedModel> {
        let spec = self.spec()?;
        let theta = match (self.theta, self.rho) {
            (Some(t), _) => t,
            (None, Some(r)) => equilibrium::theta_of_rho(&spec, r)?,
            (None, None) => 0.0,
        };
        ResolvedModel::new(spec, theta)
    }
}

/// A model at a fixed θ with its equilibrium quantities.
#[derive(Debug, Clone)]
pub struct ResolvedModel {
    pub spec: ModelSpec,
    pub theta: f64,
    pub marginal: Marginal,
    pub moments: MomentTable,
    /// Characteristic speed, closed form where available.
    pub speed: f64,
}

impl ResolvedModel {
    pub fn new(spec: ModelSpec, theta: f64) -> Result<Self> {
        let marginal = build_marginal(&spec, theta, DEFAULT_EPS)?;
        let fine = build_marginal(&spec, theta, equilibrium::FINE_EPS)?;
        let moments = equilibrium::moments(&spec, &fine);
        let speed = match equilibrium::characteristic_speed_closed(&spec, theta) {
            Ok(c) => c,
            Err(EquilibriumError::Unsupported(_)) => equilibrium::characteristic_speed_static(&spec, &fine),
            Err(e) => return Err(e.into()),
        };
        Ok(ResolvedModel { spec, theta, marginal, moments, speed })
    }

    pub fn at_theta(&self, theta: f64) -> Result<Self> {
        Self::new(self.spec.clone(), theta)
    }
}

/// One line of a check report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRow {
    pub check: String,
    pub param_json: String,
    pub estimate: f64,
    pub ci95: Option<f64>,
    pub target: Option<f64>,
    pub zscore: Option<f64>,
    pub pass: Option<bool>,
    /// Exact checks always gate; statistical ones gate only in strict mode.
    #[serde(skip)]
    pub exact: bool,
}

impl CheckRow {
    pub fn new(check: &str, params: Value, estimate: f64) -> Self {
        CheckRow {
            check: check.to_string(),
            param_json: params.to_string(),
            estimate,
            ci95: None,
            target: None,
            zscore: None,
            pass: None,
            exact: false,
        }
    }

    /// Statistical comparison of an estimate with a target.
    pub fn compare(check: &str, params: Value, est: Estimate, target: f64, rel_tol: Option<f64>) -> Self {
        let z = est.zscore(target);
        // a relative tolerance is meaningless against a zero target
        let pass = match rel_tol {
            Some(tol) if target != 0.0 => (est.value - target).abs() <= tol * target.abs(),
            _ => z.abs() < 3.0,
        };
        CheckRow {
            ci95: Some(est.ci95()),
            target: Some(target),
            zscore: Some(z),
            pass: Some(pass),
            ..Self::new(check, params, est.value)
        }
    }

    pub fn exact(check: &str, params: Value, estimate: f64, target: f64, pass: bool) -> Self {
        CheckRow { target: Some(target), pass: Some(pass), exact: true, ..Self::new(check, params, estimate) }
    }

    pub fn failed(&self) -> bool {
        self.pass == Some(false)
    }
}

/// Writes rows as CSV with header check,param_json,estimate,ci95,target,zscore,pass.
pub fn write_report<W: std::io::Write>(rows: &[CheckRow], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(std::io::Error::other)?;
    }
    if rows.is_empty() {
        w.write_record(["check", "param_json", "estimate", "ci95", "target", "zscore", "pass"])
            .map_err(std::io::Error::other)?;
    }
    w.flush()
}
