//! Differential evolution, DE/local-to-best/1 without crossover.
//!
//! Trial vector: `v = x_i + F (x_best - x_i) + F (x_r1 - x_r2)` with `r1`,
//! `r2` distinct and different from `i`. Members are replaced in place, so a
//! replacement is visible to the remaining targets of the same generation.

use crate::eval::{BudgetExhausted, BudgetedEvaluator, Objective, RunRecord, Termination};
use crate::functions::OrthogonalMatrix;
use crate::optimizer::{IterationCost, Optimizer};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeConfig {
    pub np: usize,
    pub f_weight: f64,
    /// Always 0: the trial vector is used as-is.
    pub crossover_rate: f64,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DeConfigError {
    #[error("population size {0} is below 4")]
    Population(usize),
    #[error("differential weight {0} outside (0, 2)")]
    Weight(f64),
}

impl DeConfig {
    /// `NP = 10 n`, `F = 0.8`.
    pub fn for_dim(n: usize) -> Self {
        Self {
            np: 10 * n,
            f_weight: 0.8,
            crossover_rate: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), DeConfigError> {
        if self.np < 4 {
            return Err(DeConfigError::Population(self.np));
        }
        if !(self.f_weight > 0.0 && self.f_weight < 2.0) {
            return Err(DeConfigError::Weight(self.f_weight));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DePopulation {
    pub members: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub best_index: usize,
    pub generation: u64,
}

fn ranks_below(a: f64, b: f64) -> bool {
    // NaN never counts as better.
    a < b || (b.is_nan() && !a.is_nan())
}

impl DePopulation {
    /// Build from already-evaluated members. Ties go to the lowest index.
    pub fn from_members(members: Vec<Vec<f64>>, values: Vec<f64>) -> Self {
        assert_eq!(members.len(), values.len());
        let mut best = 0;
        for (i, v) in values.iter().enumerate() {
            if ranks_below(*v, values[best]) {
                best = i;
            }
        }
        Self {
            members,
            values,
            best_index: best,
            generation: 0,
        }
    }

    /// Uniform initial population, evaluated in order. Fails if the budget
    /// runs out before every member is evaluated.
    pub fn init(
        config: &DeConfig,
        ev: &mut BudgetedEvaluator<'_>,
        rng: &mut RngStream,
        frame: Option<&OrthogonalMatrix>,
    ) -> Result<Self, BudgetExhausted> {
        let n = ev.dim();
        let (lo, hi) = ev.objective().init_bounds();
        let mut members = Vec::with_capacity(config.np);
        let mut values = Vec::with_capacity(config.np);
        for _ in 0..config.np {
            let mut x = rng.uniform_vec(n, lo, hi);
            if let Some(b) = frame {
                x = b.apply_transpose(&x);
            }
            values.push(ev.evaluate(&x)?);
            members.push(x);
        }
        Ok(Self::from_members(members, values))
    }

    pub fn best_value(&self) -> f64 {
        self.values[self.best_index]
    }

    /// Trial vector for target `i`.
    pub fn mutate(&self, config: &DeConfig, i: usize, rng: &mut RngStream) -> Vec<f64> {
        let (r1, r2) = draw_pair(self.members.len(), i, rng);
        mutation(
            &self.members[i],
            &self.members[self.best_index],
            &self.members[r1],
            &self.members[r2],
            config.f_weight,
        )
    }

    /// One generation: for each target in order, build a trial, evaluate it,
    /// and replace the target if the trial is no worse.
    pub fn step(
        &mut self,
        config: &DeConfig,
        ev: &mut BudgetedEvaluator<'_>,
        rng: &mut RngStream,
    ) -> Result<(), BudgetExhausted> {
        for i in 0..self.members.len() {
            let trial = self.mutate(config, i, rng);
            let v = ev.evaluate(&trial)?;
            if v <= self.values[i] {
                self.members[i] = trial;
                self.values[i] = v;
                let b = self.best_index;
                if ranks_below(v, self.values[b]) || (v == self.values[b] && i < b) {
                    self.best_index = i;
                }
            }
        }
        self.generation += 1;
        Ok(())
    }
}

/// `x_i + F (x_best - x_i) + F (x_r1 - x_r2)`.
pub fn mutation(xi: &[f64], best: &[f64], r1: &[f64], r2: &[f64], f: f64) -> Vec<f64> {
    xi.iter()
        .zip(best)
        .zip(r1.iter().zip(r2))
        .map(|((x, b), (a, c))| x + f * (b - x) + f * (a - c))
        .collect()
}

/// Two distinct indices in `0..np`, both different from `exclude`.
fn draw_pair(np: usize, exclude: usize, rng: &mut RngStream) -> (usize, usize) {
    let mut r1 = rng.below(np - 1);
    if r1 >= exclude {
        r1 += 1;
    }
    let (lo, hi) = if r1 < exclude {
        (r1, exclude)
    } else {
        (exclude, r1)
    };
    let mut r2 = rng.below(np - 2);
    if r2 >= lo {
        r2 += 1;
    }
    if r2 >= hi {
        r2 += 1;
    }
    (r1, r2)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DifferentialEvolution;

impl DifferentialEvolution {
    pub const DEFAULT: DifferentialEvolution = DifferentialEvolution;

    fn drive(
        &self,
        ev: &mut BudgetedEvaluator<'_>,
        rng: &mut RngStream,
        frame: Option<&OrthogonalMatrix>,
    ) -> Termination {
        let config = DeConfig::for_dim(ev.dim());
        let Ok(mut pop) = DePopulation::init(&config, ev, rng, frame) else {
            return ev.stop_reason();
        };
        while !ev.should_stop() {
            if pop.step(&config, ev, rng).is_err() {
                break;
            }
        }
        ev.stop_reason()
    }
}

impl Optimizer for DifferentialEvolution {
    fn name(&self) -> &'static str {
        "de"
    }

    fn minimize(&self, ev: &mut BudgetedEvaluator<'_>, rng: &mut RngStream) -> Termination {
        self.drive(ev, rng, None)
    }

    fn minimize_conjugated(
        &self,
        ev: &mut BudgetedEvaluator<'_>,
        rng: &mut RngStream,
        frame: &OrthogonalMatrix,
    ) -> Option<Termination> {
        Some(self.drive(ev, rng, Some(frame)))
    }

    fn iteration_cost(&self, n: usize) -> IterationCost {
        let np = DeConfig::for_dim(n).np as u64;
        IterationCost {
            init: np,
            per_iteration: np,
        }
    }

    fn describe(&self, n: usize) -> String {
        let c = DeConfig::for_dim(n);
        format!(
            "de: local-to-best/1 NP={} F={} CR={}",
            c.np, c.f_weight, c.crossover_rate
        )
    }
}

/// One DE start on `objective`.
pub fn run(objective: &dyn Objective, budget: u64, rng: &mut RngStream) -> RunRecord {
    crate::optimizer::run(&DifferentialEvolution, objective, budget, rng)
}
