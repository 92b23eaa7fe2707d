//! Run configuration: built-in defaults, then an optional TOML file, then flags.

use std::path::Path;

use cotwave::cot::SampleSize;
use cotwave::infer::IntervalMethod;
use cotwave::simbench::{ExperimentMode, ModelKind, ORACLE_POINTS};
use cotwave::{BootstrapConfig, CotConfig, EstimatorConfig, GaussianCondModel};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarlo {
    /// Covariate draws; unset means the automatic rule (or the experiment default).
    pub n_z: Option<SampleSize>,
    /// Outcome draws per covariate and arm.
    pub n_y: Option<SampleSize>,
    pub max_n_z: usize,
    pub max_n_y: usize,
}

impl Default for MonteCarlo {
    fn default() -> Self {
        let d = CotConfig::default();
        MonteCarlo { n_z: None, n_y: None, max_n_z: d.max_n_z, max_n_y: d.max_n_y }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bootstrap {
    pub b: usize,
    pub level: f64,
    pub method: IntervalMethod,
}

impl Default for Bootstrap {
    fn default() -> Self {
        let d = BootstrapConfig::default();
        Bootstrap { b: d.b, level: d.level, method: d.method }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Simulation {
    /// Sample sizes per arm; unset means the mode default.
    pub n: Option<Vec<usize>>,
    pub reps: Option<usize>,
    pub oracle_points: usize,
}

impl Default for Simulation {
    fn default() -> Self {
        Simulation { n: None, reps: None, oracle_points: ORACLE_POINTS }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub estimator: EstimatorConfig,
    pub monte_carlo: MonteCarlo,
    pub bootstrap: Bootstrap,
    pub simulation: Simulation,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    }

    /// Estimator settings for data sets; unset sizes follow the automatic rule.
    pub fn cot_config(&self) -> CotConfig {
        CotConfig {
            n_z: self.monte_carlo.n_z.unwrap_or(SampleSize::Auto),
            n_y: self.monte_carlo.n_y.unwrap_or(SampleSize::Auto),
            max_n_z: self.monte_carlo.max_n_z,
            max_n_y: self.monte_carlo.max_n_y,
            seed: self.seed,
            estimator: self.estimator.clone(),
            ..CotConfig::default()
        }
    }

    pub fn bootstrap_config(&self) -> BootstrapConfig {
        BootstrapConfig {
            b: self.bootstrap.b,
            level: self.bootstrap.level,
            method: self.bootstrap.method,
            seed: self.seed,
            sd_override: None,
        }
    }

    /// Fills unset simulation settings with the experiment defaults for `model` and `mode`.
    pub fn resolve_simulation(&mut self, model: &GaussianCondModel, mode: ExperimentMode) {
        let (n_z, n_y) = experiment_budget(model.kind(), mode);
        self.monte_carlo.n_z.get_or_insert(SampleSize::Fixed(n_z));
        self.monte_carlo.n_y.get_or_insert(SampleSize::Fixed(n_y));
        let (n, reps) = match mode {
            ExperimentMode::Rates => (vec![250, 500, 1000, 2000], 50),
            ExperimentMode::Coverage => (vec![2000], 100),
        };
        self.simulation.n.get_or_insert(n);
        self.simulation.reps.get_or_insert(reps);
    }
}

/// Monte Carlo budgets `(N_Z, N_Y)` of the standard simulation studies.
pub fn experiment_budget(kind: ModelKind, mode: ExperimentMode) -> (usize, usize) {
    match (mode, kind) {
        (ExperimentMode::Coverage, _) => (120, 120),
        (ExperimentMode::Rates, ModelKind::Location) => (200, 300),
        (ExperimentMode::Rates, ModelKind::Quadratic) => (50, 300),
        (ExperimentMode::Rates, ModelKind::Scale) => (100, 600),
    }
}
