//! Experiment runner: independent trials, SP1 aggregation, sweeps,
//! invariance checks and result files.
//!
//! Trial `k` of a cell draws its optimizer stream from
//! `derive_stream(master_seed, k)`, so a cell's outcome does not depend on
//! which other cells run or in what order. Rotations come from a separate
//! salted stream, either one per trial or one shared by all trials.

mod invariance;
mod persist;
mod sweep;

pub use invariance::{invariance_check, InvarianceError, InvarianceMode, InvarianceReport};
pub use persist::{
    load, persist, plot_file_name, read_trials_csv, read_trials_json, write_plot_data,
    write_summary_csv, write_trials_csv, write_trials_json, Format, PersistError, TrialRow,
    CSV_HEADER,
};
pub use sweep::{sweep, ConfigError, Profile, SweepCell, SweepConfig, SweepTable};

use std::panic::{catch_unwind, AssertUnwindSafe};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eval::RunRecord;
use crate::functions::{make_rotation, FunctionError, FunctionKind, FunctionSpec};
use crate::optimizer::{self, Optimizer};
use crate::rng::{derive_stream, splitmix64};

pub const DEFAULT_TRIALS: usize = 21;
pub const DEFAULT_BUDGET: u64 = 10_000_000;

const ROTATION_SALT: u64 = 0x726f_7461_7469_6f6e;

/// How rotated cells pick their rotation matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RotationMode {
    /// A fresh rotation for every trial.
    #[default]
    PerTrial,
    /// One rotation shared by all trials of a cell.
    Shared,
}

impl std::fmt::Display for RotationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RotationMode::PerTrial => "per-trial",
            RotationMode::Shared => "shared",
        })
    }
}

impl std::str::FromStr for RotationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per-trial" => Ok(RotationMode::PerTrial),
            "shared" => Ok(RotationMode::Shared),
            other => Err(format!(
                "unknown rotation mode `{other}` (expected per-trial or shared)"
            )),
        }
    }
}

/// One benchmark problem: function, dimension, conditioning and rotation flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub function: FunctionKind,
    pub dim: usize,
    pub alpha: f64,
    pub rotated: bool,
    /// Overrides the default target.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
}

impl Problem {
    pub fn new(function: FunctionKind, dim: usize, alpha: f64, rotated: bool) -> Self {
        Self {
            function,
            dim,
            alpha,
            rotated,
            target: None,
        }
    }

    pub fn with_target(mut self, target: Option<f64>) -> Self {
        self.target = target;
        self
    }

    /// Unrotated spec; validates dimension and alpha.
    pub fn base_spec(&self) -> Result<FunctionSpec, FunctionError> {
        let spec = FunctionSpec::new(self.function, self.dim, self.alpha)?;
        Ok(match self.target {
            Some(t) => spec.with_target(t),
            None => spec,
        })
    }

    /// Spec used by trial `k`.
    pub fn spec_for_trial(
        &self,
        master_seed: u64,
        k: u64,
        mode: RotationMode,
    ) -> Result<FunctionSpec, FunctionError> {
        let spec = self.base_spec()?;
        if !self.rotated {
            return Ok(spec);
        }
        let lane = match mode {
            RotationMode::PerTrial => k,
            RotationMode::Shared => u64::MAX,
        };
        let mut rng = derive_stream(splitmix64(master_seed ^ ROTATION_SALT), lane);
        spec.with_rotation(make_rotation(self.dim, &mut rng))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialSettings {
    pub budget: u64,
    pub master_seed: u64,
    pub rotation_mode: RotationMode,
}

impl Default for TrialSettings {
    fn default() -> Self {
        Self {
            budget: DEFAULT_BUDGET,
            master_seed: 0,
            rotation_mode: RotationMode::PerTrial,
        }
    }
}

/// Trial `k` of `opt` on `problem`.
pub fn run_trial(
    opt: &dyn Optimizer,
    problem: &Problem,
    settings: &TrialSettings,
    k: u64,
) -> Result<RunRecord, FunctionError> {
    let spec = problem.spec_for_trial(settings.master_seed, k, settings.rotation_mode)?;
    let mut rng = derive_stream(settings.master_seed, k);
    Ok(if opt.restart_on_stall() {
        optimizer::run_with_restarts(opt, &spec, settings.budget, &mut rng)
    } else {
        optimizer::run(opt, &spec, settings.budget, &mut rng)
    })
}

/// `n_trials` independent trials, in trial order.
pub fn run_trials(
    opt: &dyn Optimizer,
    problem: &Problem,
    settings: &TrialSettings,
    n_trials: usize,
) -> Result<Vec<RunRecord>, FunctionError> {
    (0..n_trials as u64)
        .map(|k| run_trial(opt, problem, settings, k))
        .collect()
}

/// Success performance of a set of trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sp1Result {
    /// Infinite when no trial succeeded.
    #[serde(with = "float_or_inf")]
    pub sp1: f64,
    pub success_rate: f64,
    /// Mean evaluations to target over successful trials.
    pub mean_evals_success: Option<f64>,
    pub n_trials: usize,
    pub successes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("SP1 needs at least one trial")]
pub struct NoRecords;

/// Mean evaluations to target over the successful records, divided by the
/// fraction of successful records.
pub fn sp1(records: &[RunRecord]) -> Result<Sp1Result, NoRecords> {
    if records.is_empty() {
        return Err(NoRecords);
    }
    let hits: Vec<u64> = records
        .iter()
        .filter(|r| r.success)
        .filter_map(|r| r.evals_to_target)
        .collect();
    let n = records.len();
    let successes = hits.len();
    let success_rate = successes as f64 / n as f64;
    if successes == 0 {
        return Ok(Sp1Result {
            sp1: f64::INFINITY,
            success_rate: 0.0,
            mean_evals_success: None,
            n_trials: n,
            successes: 0,
        });
    }
    let total: u128 = hits.iter().map(|&e| e as u128).sum();
    let mean = total as f64 / successes as f64;
    // mean / (s / n), rounded once.
    let sp1 = (total as f64 * n as f64) / (successes as f64 * successes as f64);
    Ok(Sp1Result {
        sp1,
        success_rate,
        mean_evals_success: Some(mean),
        n_trials: n,
        successes,
    })
}

/// Maps `f` over `items` on `jobs` worker threads. Output order follows
/// input order regardless of scheduling.
pub(crate) fn par_map<T, R, F>(
    jobs: usize,
    items: &[T],
    f: F,
) -> Result<Vec<R>, rayon::ThreadPoolBuildError>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    if jobs <= 1 {
        return Ok(items.iter().map(f).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    Ok(pool.install(|| items.par_iter().map(&f).collect()))
}

/// Runs `f`, turning a panic into an error message.
pub(crate) fn guarded<R>(f: impl FnOnce() -> R) -> Result<R, String> {
    catch_unwind(AssertUnwindSafe(f)).map_err(|e| {
        e.downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| e.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "panic".to_string())
    })
}

/// Serializes non-finite floats as the strings `inf`, `-inf` and `nan`.
pub(crate) mod float_or_inf {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(de::Error::invalid_value(
                    de::Unexpected::Str(other),
                    &"a number, inf, -inf or nan",
                )),
            },
        }
    }
}
