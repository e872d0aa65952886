//! Run configuration: one TOML file, `version = 1`.
//!
//! ```toml
//! version = 1
//! seed = 7
//!
//! [scenario]
//! kind = "moodie"          # one_decision | two_decision | moodie, plus parameters
//!
//! [simulate]
//! n = 1000
//!
//! [study]
//! n = 1000
//! reps = 10000
//! value = { method = "analytic" }
//! ```
//!
//! Sections other than `scenario` are needed only by the subcommand that
//! reads them. Relative paths are resolved against the config file.

use std::fmt;
use std::path::{Path, PathBuf};

use dtr_core::calibrate::{CalibrationConfig, Grid};
use dtr_core::data::{DecisionRule, StageSpec};
use dtr_core::evaluate::{Estimators, StudyConfig, ValueMethod};
use dtr_core::scenarios::Scenario;
use dtr_core::Error;
use serde::{Deserialize, Serialize};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    /// Where outputs go; not part of the config hash.
    #[serde(default, skip_serializing)]
    pub out_dir: Option<PathBuf>,
    pub scenario: Scenario,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<ValueSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub study: Option<StudySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibrate: Option<CalibrateSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub n: usize,
}

fn both() -> Estimators {
    Estimators::Both
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    /// Dataset CSV.
    pub data: PathBuf,
    #[serde(default = "both")]
    pub estimator: Estimators,
    /// Working models; the scenario's when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub specs: Option<Vec<StageSpec>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    Analytic,
    Gcomp,
}

fn analytic() -> ValueKind {
    ValueKind::Analytic
}
fn default_b() -> usize {
    100_000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValueSection {
    #[serde(default = "analytic")]
    pub method: ValueKind,
    /// g-computation draws.
    #[serde(default = "default_b")]
    pub b: usize,
    /// The regime to evaluate; the scenario's optimal regime when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rules: Option<Vec<DecisionRule>>,
}

fn default_reps() -> usize {
    10_000
}
fn default_value() -> ValueMethod {
    ValueMethod::Analytic
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    pub n: usize,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "both")]
    pub estimators: Estimators,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub specs: Option<Vec<StageSpec>>,
    #[serde(default = "default_value")]
    pub value: ValueMethod,
}

fn default_n_cal() -> usize {
    10_000
}
fn default_degree() -> usize {
    6
}
fn default_target() -> f64 {
    0.99
}
fn default_check_reps() -> usize {
    100
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateSection {
    #[serde(default)]
    pub grid: Grid,
    #[serde(default = "default_n_cal")]
    pub n_cal: usize,
    #[serde(default = "default_degree")]
    pub poly_max_degree: usize,
    #[serde(default = "default_target")]
    pub adj_r2_target: f64,
    /// Replications of the t-statistic balance check per emitted pair; 0
    /// skips it.
    #[serde(default = "default_check_reps")]
    pub check_reps: usize,
    /// Sample size of the balance check; `n_cal` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub check_n: Option<usize>,
}

/// Failures mapped to exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad config, flags or input files: exit 2.
    Config(String),
    /// Singular systems, non-convergence and the like: exit 3.
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    /// A library error raised while handling config section `section`;
    /// parameter complaints get the section prefixed onto the key they name.
    pub fn from_core(section: &str, e: Error) -> Self {
        match e {
            Error::Spec(m) | Error::InvalidParameter(m) if !section.is_empty() => {
                CliError::Config(format!("{section}.{m}"))
            }
            e if e.is_numerical() => CliError::Numerical(e.to_string()),
            e => CliError::Config(e.to_string()),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl Config {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: Config = toml::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
        if cfg.version != CONFIG_VERSION {
            return Err(CliError::Config(format!(
                "version must be {CONFIG_VERSION}, got {}",
                cfg.version
            )));
        }
        Ok(cfg)
    }

    /// Checks every section present without running anything.
    pub fn validate(&self) -> CliResult<()> {
        self.scenario.validate().map_err(|e| CliError::from_core("scenario", e))?;
        let dims = self.scenario.state_dims();
        if let Some(s) = &self.simulate {
            if s.n == 0 {
                return Err(CliError::Config("simulate.n must be >= 1".into()));
            }
        }
        if let Some(f) = &self.fit {
            if let Some(specs) = &f.specs {
                check_specs("fit.specs", specs, &dims)?;
            }
        }
        if let Some(v) = &self.value {
            if v.method == ValueKind::Gcomp && v.b == 0 {
                return Err(CliError::Config("value.b must be >= 1".into()));
            }
            if let Some(rules) = &v.rules {
                if rules.len() != self.scenario.stages() {
                    return Err(CliError::Config(format!(
                        "value.rules has {} entries for a {}-decision scenario",
                        rules.len(),
                        self.scenario.stages()
                    )));
                }
                for (k, r) in rules.iter().enumerate() {
                    r.features
                        .validate(k + 1, &dims)
                        .map_err(|e| CliError::Config(format!("value.rules[{k}]: {e}")))?;
                }
            }
        }
        if self.study.is_some() {
            self.study_config()?.validate().map_err(|e| CliError::from_core("study", e))?;
        }
        if let Some(c) = &self.calibrate {
            self.calibration_config()?.validate().map_err(|e| CliError::from_core("calibrate", e))?;
            if c.check_n == Some(0) {
                return Err(CliError::Config("calibrate.check_n must be >= 1".into()));
            }
        }
        Ok(())
    }

    pub fn section<'a, T>(&self, s: &'a Option<T>, name: &str) -> CliResult<&'a T> {
        s.as_ref().ok_or_else(|| CliError::Config(format!("missing [{name}] section")))
    }

    pub fn study_config(&self) -> CliResult<StudyConfig> {
        let s = self.section(&self.study, "study")?;
        Ok(StudyConfig {
            scenario: self.scenario.clone(),
            n: s.n,
            reps: s.reps,
            master_seed: self.seed,
            estimators: s.estimators,
            specs: s.specs.clone(),
            value: s.value,
        })
    }

    pub fn calibration_config(&self) -> CliResult<CalibrationConfig> {
        let c = self.section(&self.calibrate, "calibrate")?;
        Ok(CalibrationConfig {
            scenario: self.scenario.clone(),
            grid: c.grid,
            n_cal: c.n_cal,
            poly_max_degree: c.poly_max_degree,
            adj_r2_target: c.adj_r2_target,
            master_seed: self.seed,
        })
    }
}

fn check_specs(section: &str, specs: &[StageSpec], dims: &[usize]) -> CliResult<()> {
    if specs.len() != dims.len() {
        return Err(CliError::Config(format!(
            "{section} has {} entries for a {}-decision scenario",
            specs.len(),
            dims.len()
        )));
    }
    for (k, s) in specs.iter().enumerate() {
        s.validate(k + 1, dims)
            .map_err(|e| CliError::Config(format!("{section}[{k}]: {e}")))?;
    }
    Ok(())
}
