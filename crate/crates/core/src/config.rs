//! Run-configuration file: a documented key-value (TOML) schema.
//!
//! ```toml
//! problem = "drug"          # built-in benchmark family
//! k = 20                    # number of systems
//! eps = 0.1                 # total tolerance
//! alpha = 0.1               # total significance
//! stages = 1                # T
//! method = "exact"          # exact | asymptotic
//! objective = "different"   # same | different
//! seed = 2024
//! replications = 100
//! r0 = 20                   # initial prune sample size
//! use_crn = false           # common random numbers for prune draws
//! out = "out"               # output directory
//! # gamma = 0.5             # optional SGD step scale (default 1/mu)
//!
//! # optional benchmark-constant overrides for sensitivity studies
//! # [overrides]
//! # cost = 1.0
//! # omega = 1.0
//! # sigma_g_sq = 0.3333333333333333
//! # d_bound = 2.0
//! # l = 5.0
//! # sigma_tilde_sq = 0.05
//! ```

use serde::Deserialize;
use thiserror::Error;

use crate::drug::DrugOverrides;
use crate::orchestrator::{Method, ObjectiveMode, RunConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse config {path}: {source}")]
    Parse { path: String, source: toml::de::Error },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default = "defaults::problem")]
    pub problem: String,
    #[serde(default = "defaults::k")]
    pub k: usize,
    #[serde(default = "defaults::eps")]
    pub eps: f64,
    #[serde(default = "defaults::alpha")]
    pub alpha: f64,
    #[serde(default = "defaults::stages")]
    pub stages: usize,
    #[serde(default = "defaults::method")]
    pub method: String,
    #[serde(default = "defaults::objective")]
    pub objective: String,
    #[serde(default = "defaults::seed")]
    pub seed: u64,
    #[serde(default = "defaults::replications")]
    pub replications: u64,
    #[serde(default = "defaults::r0")]
    pub r0: u64,
    #[serde(default)]
    pub use_crn: bool,
    #[serde(default = "defaults::out")]
    pub out: String,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub overrides: Overrides,
}

#[derive(Clone, Copy, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    pub cost: Option<f64>,
    pub omega: Option<f64>,
    pub sigma_g_sq: Option<f64>,
    pub d_bound: Option<f64>,
    pub l: Option<f64>,
    pub sigma_tilde_sq: Option<f64>,
}

impl Default for FileConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config uses defaults")
    }
}

mod defaults {
    pub fn problem() -> String {
        "drug".into()
    }
    pub fn k() -> usize {
        20
    }
    pub fn eps() -> f64 {
        0.1
    }
    pub fn alpha() -> f64 {
        0.1
    }
    pub fn stages() -> usize {
        1
    }
    pub fn method() -> String {
        "exact".into()
    }
    pub fn objective() -> String {
        "different".into()
    }
    pub fn seed() -> u64 {
        2024
    }
    pub fn replications() -> u64 {
        100
    }
    pub fn r0() -> u64 {
        20
    }
    pub fn out() -> String {
        "out".into()
    }
}

impl FileConfig {
    pub fn load(path: &str) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.into(), source })?;
        toml::from_str(&text).map_err(|source| ConfigError::Parse { path: path.into(), source })
    }

    pub fn method_enum(&self) -> Result<Method, ConfigError> {
        self.method.parse().map_err(ConfigError::Invalid)
    }

    pub fn objective_enum(&self) -> Result<ObjectiveMode, ConfigError> {
        self.objective.parse().map_err(ConfigError::Invalid)
    }

    pub fn run_config(&self) -> Result<RunConfig, ConfigError> {
        if self.problem != "drug" {
            return Err(ConfigError::Invalid(format!(
                "unknown problem '{}' (only 'drug' is built in)",
                self.problem
            )));
        }
        Ok(RunConfig {
            method: self.method_enum()?,
            objective: self.objective_enum()?,
            eps: self.eps,
            alpha: self.alpha,
            t_stages: self.stages,
            r0: self.r0,
            use_crn: self.use_crn,
            seed: self.seed,
            replications: self.replications,
            gamma: self.gamma,
        })
    }

    pub fn drug_overrides(&self) -> DrugOverrides {
        DrugOverrides {
            cost: self.overrides.cost,
            omega: self.overrides.omega,
            sigma_g_sq: self.overrides.sigma_g_sq,
            d_bound: self.overrides.d_bound,
            l: self.overrides.l,
            sigma_tilde_sq: self.overrides.sigma_tilde_sq,
        }
    }
}
