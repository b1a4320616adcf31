//! The interface the harness drives, plus the string-keyed registry.

use crate::eval::{BudgetedEvaluator, Objective, RunRecord, Termination};
use crate::functions::OrthogonalMatrix;
use crate::rng::RngStream;
use crate::{bfgs, cmaes, de, pso, trustregion};

/// Evaluations spent before the first iteration, and per iteration after it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IterationCost {
    pub init: u64,
    pub per_iteration: u64,
}

impl IterationCost {
    /// Evaluations needed to complete `iterations` iterations.
    pub fn evals_for(&self, iterations: u64) -> u64 {
        self.init + self.per_iteration * iterations
    }
}

pub trait Optimizer: Sync + Send {
    fn name(&self) -> &'static str;

    /// One start from a fresh random initial state. Runs until the evaluator
    /// says stop or the algorithm's own termination criteria fire.
    fn minimize(&self, ev: &mut BudgetedEvaluator<'_>, rng: &mut RngStream) -> Termination;

    /// Like [`Optimizer::minimize`], but every draw of the initial state is
    /// mapped through `frame^T`. Running on `f(B x)` with `frame = B` then
    /// reproduces the trajectory of `f(x)` mapped by `B^T`, for algorithms
    /// that are rotation equivariant. `None` if unsupported.
    fn minimize_conjugated(
        &self,
        _ev: &mut BudgetedEvaluator<'_>,
        _rng: &mut RngStream,
        _frame: &OrthogonalMatrix,
    ) -> Option<Termination> {
        None
    }

    /// Restart from a fresh point when a start ends early, within one budget.
    fn restart_on_stall(&self) -> bool {
        false
    }

    fn iteration_cost(&self, n: usize) -> IterationCost;

    /// Resolved parameter summary for dimension `n`.
    fn describe(&self, n: usize) -> String;
}

/// Single start of `opt` on `objective`.
pub fn run(
    opt: &dyn Optimizer,
    objective: &dyn Objective,
    budget: u64,
    rng: &mut RngStream,
) -> RunRecord {
    let seed = rng.seed();
    let mut ev = BudgetedEvaluator::new(objective, budget);
    opt.minimize(&mut ev, rng);
    RunRecord::from_evaluator(opt.name(), seed, &ev)
}

/// Repeated starts of `opt` sharing one budget until the target is hit or
/// the budget runs out. A start that makes no evaluation ends the loop.
pub fn run_with_restarts(
    opt: &dyn Optimizer,
    objective: &dyn Objective,
    budget: u64,
    rng: &mut RngStream,
) -> RunRecord {
    let seed = rng.seed();
    let mut ev = BudgetedEvaluator::new(objective, budget);
    loop {
        let before = ev.used();
        opt.minimize(&mut ev, rng);
        if ev.should_stop() || ev.used() == before {
            break;
        }
    }
    RunRecord::from_evaluator(opt.name(), seed, &ev)
}

static CMAES: cmaes::Cmaes = cmaes::Cmaes::DEFAULT;
static DE: de::DifferentialEvolution = de::DifferentialEvolution::DEFAULT;
static PSO: pso::Spso2006 = pso::Spso2006::DEFAULT;
static BFGS: bfgs::Bfgs = bfgs::Bfgs::DEFAULT;
static TRUST_REGION: trustregion::TrustRegion = trustregion::TrustRegion::DEFAULT;

static REGISTRY: [&dyn Optimizer; 5] = [&CMAES, &DE, &PSO, &BFGS, &TRUST_REGION];

/// All registered optimizers, in canonical order.
pub fn registry() -> &'static [&'static dyn Optimizer] {
    &REGISTRY
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("unknown optimizer `{name}` (expected one of: {valid})")]
pub struct UnknownOptimizer {
    pub name: String,
    pub valid: String,
}

pub fn lookup(name: &str) -> Result<&'static dyn Optimizer, UnknownOptimizer> {
    let name = match name {
        "cma" | "cma-es" => "cmaes",
        "newuoa" | "tr" => "trustregion",
        other => other,
    };
    registry()
        .iter()
        .copied()
        .find(|o| o.name() == name)
        .ok_or_else(|| UnknownOptimizer {
            name: name.to_string(),
            valid: registry()
                .iter()
                .map(|o| o.name())
                .collect::<Vec<_>>()
                .join(", "),
        })
}
