use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{guarded, par_map, run_trial, sp1, Problem, RotationMode, Sp1Result, TrialSettings};
use crate::eval::RunRecord;
use crate::functions::{FunctionKind, MAX_DIM};
use crate::optimizer::{self, UnknownOptimizer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// Dimensions 5 and 10, budget 10^6, 11 trials.
    Desk,
    /// Dimensions 10, 20 and 40, budget 10^7, 21 trials.
    Paper,
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(format!(
                "unknown profile `{other}` (expected desk or paper)"
            )),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("`{0}` must not be empty")]
    Empty(&'static str),
    #[error("dimension {0} is outside [2, {MAX_DIM}]")]
    Dimension(usize),
    #[error("trials must be at least 1")]
    Trials,
    #[error("alpha {alpha} is outside [1, {max:e}] for {function}")]
    Alpha {
        function: FunctionKind,
        alpha: f64,
        max: f64,
    },
    #[error("target {0} is not finite")]
    Target(f64),
    #[error("jobs must be at least 1")]
    Jobs,
    #[error(transparent)]
    Optimizer(#[from] UnknownOptimizer),
    #[error("invalid sweep config: {0}")]
    Parse(String),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

/// A grid of cells: functions x dims x alphas x rotation flags x optimizers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub functions: Vec<FunctionKind>,
    pub dims: Vec<usize>,
    /// Per-function default grid when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alphas: Option<Vec<f64>>,
    pub rotations: Vec<bool>,
    pub optimizers: Vec<String>,
    pub trials: usize,
    pub budget: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
    #[serde(default)]
    pub rotation_mode: RotationMode,
    #[serde(default = "one")]
    pub jobs: usize,
}

fn one() -> usize {
    1
}

impl SweepConfig {
    pub fn profile(profile: Profile) -> Self {
        let (dims, budget, trials) = match profile {
            Profile::Desk => (vec![5, 10], 1_000_000, 11),
            Profile::Paper => (vec![10, 20, 40], 10_000_000, 21),
        };
        Self {
            functions: FunctionKind::ALL.to_vec(),
            dims,
            alphas: None,
            rotations: vec![false, true],
            optimizers: optimizer::registry()
                .iter()
                .map(|o| o.name().to_string())
                .collect(),
            trials,
            budget,
            seed: 0,
            target: None,
            rotation_mode: RotationMode::PerTrial,
            jobs: 1,
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(s).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.functions.is_empty() {
            return Err(ConfigError::Empty("functions"));
        }
        if self.dims.is_empty() {
            return Err(ConfigError::Empty("dims"));
        }
        if self.rotations.is_empty() {
            return Err(ConfigError::Empty("rotations"));
        }
        if self.optimizers.is_empty() {
            return Err(ConfigError::Empty("optimizers"));
        }
        if let Some(&d) = self.dims.iter().find(|&&d| !(2..=MAX_DIM).contains(&d)) {
            return Err(ConfigError::Dimension(d));
        }
        if self.trials == 0 {
            return Err(ConfigError::Trials);
        }
        if self.jobs == 0 {
            return Err(ConfigError::Jobs);
        }
        if let Some(t) = self.target {
            if !t.is_finite() {
                return Err(ConfigError::Target(t));
            }
        }
        if let Some(alphas) = &self.alphas {
            if alphas.is_empty() {
                return Err(ConfigError::Empty("alphas"));
            }
            for &function in &self.functions {
                let max = function.max_alpha();
                if let Some(&alpha) = alphas.iter().find(|a| !(**a >= 1.0 && **a <= max)) {
                    return Err(ConfigError::Alpha {
                        function,
                        alpha,
                        max,
                    });
                }
            }
        }
        for name in &self.optimizers {
            optimizer::lookup(name)?;
        }
        Ok(())
    }

    fn alphas_for(&self, function: FunctionKind) -> Vec<f64> {
        self.alphas
            .clone()
            .unwrap_or_else(|| function.default_alpha_grid())
    }

    /// Cells in canonical order: function, dim, alpha, rotation, optimizer.
    pub fn cells(&self) -> Vec<(Problem, String)> {
        let mut out = Vec::new();
        for &function in &self.functions {
            for &dim in &self.dims {
                for alpha in self.alphas_for(function) {
                    for &rotated in &self.rotations {
                        for name in &self.optimizers {
                            let canonical = optimizer::lookup(name)
                                .map(|o| o.name().to_string())
                                .unwrap_or_else(|_| name.clone());
                            out.push((
                                Problem::new(function, dim, alpha, rotated)
                                    .with_target(self.target),
                                canonical,
                            ));
                        }
                    }
                }
            }
        }
        out
    }

    /// Upper bound on evaluations: cells x trials x budget.
    pub fn cost_estimate(&self) -> u128 {
        self.cells().len() as u128 * self.trials as u128 * self.budget as u128
    }

    pub fn settings(&self) -> TrialSettings {
        TrialSettings {
            budget: self.budget,
            master_seed: self.seed,
            rotation_mode: self.rotation_mode,
        }
    }
}

/// One cell of a sweep and its trials.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub problem: Problem,
    pub optimizer: String,
    pub records: Vec<RunRecord>,
    /// Absent when the cell failed or has no records.
    pub result: Option<Sp1Result>,
    pub error: Option<String>,
}

impl SweepCell {
    pub fn from_records(problem: Problem, optimizer: String, records: Vec<RunRecord>) -> Self {
        let result = sp1(&records).ok();
        Self {
            problem,
            optimizer,
            records,
            result,
            error: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepTable {
    pub cells: Vec<SweepCell>,
}

impl SweepTable {
    /// The cell for the given coordinates, if present.
    pub fn cell(&self, problem: &Problem, optimizer: &str) -> Option<&SweepCell> {
        self.cells.iter().find(|c| {
            c.optimizer == optimizer
                && c.problem.function == problem.function
                && c.problem.dim == problem.dim
                && c.problem.alpha == problem.alpha
                && c.problem.rotated == problem.rotated
        })
    }
}

/// Runs every cell of `config`. Trials of all cells are scheduled together
/// on `config.jobs` threads; a failing trial marks its cell as failed
/// without stopping the sweep.
pub fn sweep(config: &SweepConfig) -> Result<SweepTable, ConfigError> {
    config.validate()?;
    let cells = config.cells();
    let settings = config.settings();
    let units: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| (0..config.trials as u64).map(move |k| (c, k)))
        .collect();
    let outcomes = par_map(config.jobs, &units, |&(c, k)| {
        let (problem, name) = &cells[c];
        let opt = optimizer::lookup(name).map_err(|e| e.to_string())?;
        guarded(|| run_trial(opt, problem, &settings, k))?.map_err(|e| e.to_string())
    })
    .map_err(|e| ConfigError::ThreadPool(e.to_string()))?;

    let mut table = SweepTable::default();
    let mut outcomes = outcomes.into_iter();
    for (problem, optimizer) in cells {
        let mut records = Vec::with_capacity(config.trials);
        let mut error = None;
        for outcome in outcomes.by_ref().take(config.trials) {
            match outcome {
                Ok(r) => records.push(r),
                Err(e) => {
                    error.get_or_insert(e);
                }
            }
        }
        let mut cell = SweepCell::from_records(problem, optimizer, records);
        if error.is_some() {
            cell.result = None;
            cell.error = error;
        }
        table.cells.push(cell);
    }
    Ok(table)
}
