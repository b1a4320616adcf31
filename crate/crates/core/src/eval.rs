//! Objective interface and budgeted evaluation.

use serde::{Deserialize, Serialize};

/// A black-box objective to be minimized.
///
/// `eval` must be deterministic: the same input yields a bit-identical value.
pub trait Objective: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64]) -> f64;
    /// Success threshold: a trial succeeds once a value `<= target` is seen.
    fn target(&self) -> f64;
    /// Coordinate-wise initialization interval `(lo, hi)`.
    fn init_bounds(&self) -> (f64, f64) {
        (-20.0, 80.0)
    }
}

impl<T: Objective + ?Sized> Objective for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, x: &[f64]) -> f64 {
        (**self).eval(x)
    }
    fn target(&self) -> f64 {
        (**self).target()
    }
    fn init_bounds(&self) -> (f64, f64) {
        (**self).init_bounds()
    }
}

/// Objective backed by a closure.
pub struct FnObjective<F> {
    dim: usize,
    target: f64,
    bounds: (f64, f64),
    f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> FnObjective<F> {
    pub fn new(dim: usize, target: f64, f: F) -> Self {
        Self {
            dim,
            target,
            bounds: (-20.0, 80.0),
            f,
        }
    }

    pub fn with_bounds(mut self, lo: f64, hi: f64) -> Self {
        self.bounds = (lo, hi);
        self
    }
}

impl<F: Fn(&[f64]) -> f64 + Sync> Objective for FnObjective<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
    fn target(&self) -> f64 {
        self.target
    }
    fn init_bounds(&self) -> (f64, f64) {
        self.bounds
    }
}

/// Returned by [`BudgetedEvaluator::evaluate`] once the budget is spent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("evaluation budget exhausted")]
pub struct BudgetExhausted;

/// One recorded evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct TracePoint {
    pub x: Vec<f64>,
    pub f: f64,
}

/// Wraps an objective with an evaluation budget and success bookkeeping.
///
/// The budget is strict: the call that would exceed it is refused, so `used`
/// never exceeds `budget`.
pub struct BudgetedEvaluator<'a> {
    objective: &'a dyn Objective,
    used: u64,
    budget: u64,
    best_f: f64,
    best_x: Vec<f64>,
    first_hit: Option<u64>,
    stop_at_target: bool,
    trace: Option<Vec<TracePoint>>,
}

impl<'a> BudgetedEvaluator<'a> {
    pub fn new(objective: &'a dyn Objective, budget: u64) -> Self {
        Self {
            objective,
            used: 0,
            budget,
            best_f: f64::INFINITY,
            best_x: Vec::new(),
            first_hit: None,
            stop_at_target: true,
            trace: None,
        }
    }

    /// Keep every evaluated point and value.
    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    /// Keep running after the target is hit (used for fixed-horizon runs).
    pub fn ignore_target(mut self) -> Self {
        self.stop_at_target = false;
        self
    }

    pub fn evaluate(&mut self, x: &[f64]) -> Result<f64, BudgetExhausted> {
        assert_eq!(x.len(), self.objective.dim(), "dimension mismatch");
        if self.used >= self.budget {
            return Err(BudgetExhausted);
        }
        let f = self.objective.eval(x);
        self.used += 1;
        if f < self.best_f || self.best_x.is_empty() {
            if f < self.best_f {
                self.best_f = f;
            }
            self.best_x.clear();
            self.best_x.extend_from_slice(x);
        }
        if self.first_hit.is_none() && f <= self.objective.target() {
            self.first_hit = Some(self.used);
        }
        if let Some(trace) = self.trace.as_mut() {
            trace.push(TracePoint { x: x.to_vec(), f });
        }
        Ok(f)
    }

    pub fn dim(&self) -> usize {
        self.objective.dim()
    }

    pub fn objective(&self) -> &'a dyn Objective {
        self.objective
    }

    pub fn used(&self) -> u64 {
        self.used
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    pub fn remaining(&self) -> u64 {
        self.budget - self.used
    }

    pub fn best_f(&self) -> f64 {
        self.best_f
    }

    pub fn best_x(&self) -> &[f64] {
        &self.best_x
    }

    /// 1-based index of the first evaluation whose value was `<= target`.
    pub fn first_hit(&self) -> Option<u64> {
        self.first_hit
    }

    pub fn exhausted(&self) -> bool {
        self.used >= self.budget
    }

    /// True once the optimizer should stop: budget spent or target reached.
    pub fn should_stop(&self) -> bool {
        self.exhausted() || (self.stop_at_target && self.first_hit.is_some())
    }

    /// Termination reason once [`Self::should_stop`] fired.
    pub fn stop_reason(&self) -> Termination {
        if self.first_hit.is_some() {
            Termination::TargetReached
        } else {
            Termination::BudgetExhausted
        }
    }

    pub fn trace(&self) -> Option<&[TracePoint]> {
        self.trace.as_deref()
    }

    pub fn take_trace(&mut self) -> Vec<TracePoint> {
        self.trace.take().unwrap_or_default()
    }
}

/// Why a single optimizer start ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    TargetReached,
    BudgetExhausted,
    /// Covariance or model lost positive definiteness / numerical meaning.
    Degenerate,
    /// The algorithm's own convergence tolerance fired.
    Converged,
    LineSearchFailed,
}

/// Outcome of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub optimizer: String,
    pub seed: u64,
    pub success: bool,
    pub evals: u64,
    pub evals_to_target: Option<u64>,
    pub best_f: f64,
}

impl RunRecord {
    pub fn from_evaluator(optimizer: &str, seed: u64, ev: &BudgetedEvaluator<'_>) -> Self {
        Self {
            optimizer: optimizer.to_string(),
            seed,
            success: ev.first_hit().is_some(),
            evals: ev.used(),
            evals_to_target: ev.first_hit(),
            best_f: ev.best_f(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sphere(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    #[test]
    fn sphere_at_origin() {
        let obj = FnObjective::new(3, 1e-9, sphere);
        let mut ev = BudgetedEvaluator::new(&obj, 10);
        assert_eq!(ev.evaluate(&[0.0; 3]).unwrap(), 0.0);
        assert_eq!(ev.used(), 1);
    }

    #[test]
    fn repeated_calls_are_identical() {
        let obj = FnObjective::new(2, 1e-9, sphere);
        let mut ev = BudgetedEvaluator::new(&obj, 10);
        let a = ev.evaluate(&[0.3, -1.7]).unwrap();
        let b = ev.evaluate(&[0.3, -1.7]).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert_eq!(ev.used(), 2);
    }

    #[test]
    fn first_hit_on_scripted_sequence() {
        // The objective reads the value to return from x[0].
        let obj = FnObjective::new(2, 1e-9, |x: &[f64]| x[0]);
        let mut ev = BudgetedEvaluator::new(&obj, 100);
        for i in 1..=60u32 {
            let v = match i {
                57 => 1e-10,
                58.. => 1e-12,
                _ => 1.0 / f64::from(i),
            };
            ev.evaluate(&[v, 0.0]).unwrap();
        }
        assert_eq!(ev.first_hit(), Some(57));
        assert_eq!(ev.best_f(), 1e-12);
    }

    #[test]
    fn budget_is_strict() {
        let obj = FnObjective::new(2, 1e-9, sphere);
        let mut ev = BudgetedEvaluator::new(&obj, 2);
        assert!(ev.evaluate(&[1.0, 1.0]).is_ok());
        assert!(ev.evaluate(&[1.0, 1.0]).is_ok());
        assert_eq!(ev.evaluate(&[1.0, 1.0]), Err(BudgetExhausted));
        assert_eq!(ev.used(), 2);
        assert!(ev.should_stop());
    }

    #[test]
    fn zero_budget_never_evaluates() {
        let obj = FnObjective::new(2, 1e-9, sphere);
        let mut ev = BudgetedEvaluator::new(&obj, 0);
        assert!(ev.evaluate(&[0.0, 0.0]).is_err());
        let rec = RunRecord::from_evaluator("x", 0, &ev);
        assert!(!rec.success);
        assert_eq!(rec.evals, 0);
        assert_eq!(rec.best_f, f64::INFINITY);
    }

    proptest! {
        #[test]
        fn best_and_first_hit_match_brute_force(
            values in proptest::collection::vec(
                prop_oneof![1e-12..1e-8f64, 1e-8..1e3f64], 1..200),
        ) {
            let target = 1e-9;
            let obj = FnObjective::new(2, target, |x: &[f64]| x[0]);
            let mut ev = BudgetedEvaluator::new(&obj, values.len() as u64);
            let mut best_seen = f64::INFINITY;
            for v in &values {
                ev.evaluate(&[*v, 0.0]).unwrap();
                prop_assert!(ev.best_f() <= best_seen);
                best_seen = ev.best_f();
            }
            let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
            prop_assert_eq!(ev.best_f(), min);
            prop_assert_eq!(ev.best_x()[0], min);
            let brute = values.iter().position(|v| *v <= target).map(|i| i as u64 + 1);
            prop_assert_eq!(ev.first_hit(), brute);
        }
    }
}
