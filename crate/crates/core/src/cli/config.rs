//! JSON problem configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::discretize::MarginalSpec;
use crate::bass_solver::SolverParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineChoice {
    Weighted,
    Sde,
    #[default]
    Both,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TimeGridSpec {
    #[default]
    Uniform,
    /// `t_k = 1 - (1 - k/K)^power`, denser near maturity.
    Refined { power: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub steps: usize,
    pub paths: usize,
    pub seed: u64,
    pub engine: EngineChoice,
    pub time_grid: TimeGridSpec,
    /// Component driven by the SDE engine.
    pub component: usize,
    /// Number of paths written to `paths_*.csv`; none are written when 0.
    pub export_paths: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            paths: 10_000,
            seed: 0,
            engine: EngineChoice::Both,
            time_grid: TimeGridSpec::Uniform,
            component: 0,
            export_paths: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub mu0: MarginalSpec,
    pub mu1: MarginalSpec,
    #[serde(default)]
    pub solver: SolverParams,
    /// Lognormal volatility of the geometric reference value.
    #[serde(default)]
    pub sigma_bar: Option<f64>,
    /// Arithmetic volatility of the arithmetic reference value; defaults to
    /// `sigma_bar`, the same volatility seen at the unit mean of `nu`.
    #[serde(default)]
    pub big_sigma_bar: Option<f64>,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default = "default_flow_times")]
    pub flow_times: Vec<f64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_flow_times() -> Vec<f64> {
    vec![0.25, 0.5, 0.75]
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

/// A parsed configuration together with the directory relative paths are
/// resolved against.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ProblemConfig,
    pub base: PathBuf,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
        let config: ProblemConfig = serde_json::from_str(&text)
            .map_err(|e| invalid(format!("config {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let loaded = Self { config, base };
        loaded.validate()?;
        Ok(loaded)
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        for spec in [&c.mu0, &c.mu1] {
            if let Some(file) = spec.referenced_file(&self.base) {
                if !file.is_file() {
                    return Err(invalid(format!("samples file {} does not exist", file.display())));
                }
            }
        }
        c.solver.validate()?;
        for (name, v) in [("sigma_bar", c.sigma_bar), ("big_sigma_bar", c.big_sigma_bar)] {
            if let Some(v) = v {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(invalid(format!("{name} = {v} must be finite and nonnegative")));
                }
            }
        }
        let sim = &c.simulation;
        if sim.steps == 0 || sim.paths == 0 {
            return Err(invalid("simulation needs steps >= 1 and paths >= 1"));
        }
        if let TimeGridSpec::Refined { power } = sim.time_grid {
            if !(power.is_finite() && power >= 1.0) {
                return Err(invalid(format!("time grid power {power} must be >= 1")));
            }
        }
        if let Some(t) = c.flow_times.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(invalid(format!("flow time {t} outside [0, 1]")));
        }
        Ok(())
    }

    /// `--out` wins over the config; the default is the working directory.
    pub fn output_dir(&self, cli_out: Option<&Path>) -> PathBuf {
        match (cli_out, &self.config.output_dir) {
            (Some(out), _) => out.to_path_buf(),
            (None, Some(dir)) => self.base.join(dir),
            (None, None) => PathBuf::from("."),
        }
    }
}
