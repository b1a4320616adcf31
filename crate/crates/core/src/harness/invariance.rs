use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::eval::{BudgetedEvaluator, TracePoint};
use crate::functions::{make_rotation, FunctionError, FunctionKind, FunctionSpec};
use crate::optimizer::Optimizer;
use crate::rng::{derive_stream, splitmix64};

/// Rotation mode passes below this relative best-value divergence.
pub const ROTATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InvarianceMode {
    /// `f` against `f^(1/4)`: evaluated points must coincide.
    Monotone,
    /// `f(x)` against `f(Bx)` started from the conjugated state.
    Rotation,
}

impl fmt::Display for InvarianceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InvarianceMode::Monotone => "monotone",
            InvarianceMode::Rotation => "rotation",
        })
    }
}

impl FromStr for InvarianceMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "monotone" | "monotone-quarter" => Ok(InvarianceMode::Monotone),
            "rotation" => Ok(InvarianceMode::Rotation),
            other => Err(format!(
                "unknown mode `{other}` (expected monotone or rotation)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub optimizer: String,
    pub mode: InvarianceMode,
    pub iterations: u64,
    /// Evaluations compared between the two runs.
    pub evaluations: u64,
    /// Monotone mode: largest coordinate difference between evaluated
    /// points. Rotation mode: largest relative difference of the best value
    /// so far.
    pub max_divergence: f64,
    /// 1-based index of the first evaluation that differs.
    pub first_divergence: Option<u64>,
    pub pass: bool,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum InvarianceError {
    #[error("{optimizer} does not support the {mode} check")]
    Unsupported {
        optimizer: String,
        mode: InvarianceMode,
    },
    #[error(transparent)]
    Function(#[from] FunctionError),
}

/// Runs `opt` twice with matched seeds over `iterations` iterations and
/// compares the runs.
///
/// Monotone mode compares runs on the ellipsoid and on its fourth root.
/// Rotation mode compares a run on the axis-parallel ellipsoid with a run
/// on a randomly rotated copy whose initial state is conjugated by the same
/// rotation. The target is ignored so both runs use the full horizon.
pub fn invariance_check(
    opt: &dyn Optimizer,
    dim: usize,
    alpha: f64,
    mode: InvarianceMode,
    seed: u64,
    iterations: u64,
) -> Result<InvarianceReport, InvarianceError> {
    let budget = opt.iteration_cost(dim).evals_for(iterations);
    let base = FunctionSpec::new(FunctionKind::Ellipsoid, dim, alpha)?;
    let trace_of = |spec: &FunctionSpec, frame: Option<&crate::functions::OrthogonalMatrix>| {
        let mut ev = BudgetedEvaluator::new(spec, budget)
            .ignore_target()
            .with_trace();
        let mut rng = derive_stream(seed, 0);
        let supported = match frame {
            None => {
                opt.minimize(&mut ev, &mut rng);
                true
            }
            Some(b) => opt.minimize_conjugated(&mut ev, &mut rng, b).is_some(),
        };
        supported.then(|| ev.take_trace())
    };
    let (a, b) = match mode {
        InvarianceMode::Monotone => {
            let quarter = FunctionSpec::new(FunctionKind::EllipsoidQuarter, dim, alpha)?;
            (trace_of(&base, None), trace_of(&quarter, None))
        }
        InvarianceMode::Rotation => {
            let mut rng = derive_stream(splitmix64(seed ^ 0x0b5e_55ed), 0);
            let rotation = make_rotation(dim, &mut rng);
            let rotated = base.clone().with_rotation(rotation.clone())?;
            (trace_of(&base, None), trace_of(&rotated, Some(&rotation)))
        }
    };
    let (Some(a), Some(b)) = (a, b) else {
        return Err(InvarianceError::Unsupported {
            optimizer: opt.name().to_string(),
            mode,
        });
    };
    let (max_divergence, first_divergence) = match mode {
        InvarianceMode::Monotone => point_divergence(&a, &b),
        InvarianceMode::Rotation => best_value_divergence(&a, &b),
    };
    let pass = match mode {
        InvarianceMode::Monotone => max_divergence == 0.0,
        InvarianceMode::Rotation => max_divergence < ROTATION_TOLERANCE,
    };
    Ok(InvarianceReport {
        optimizer: opt.name().to_string(),
        mode,
        iterations,
        evaluations: a.len().min(b.len()) as u64,
        max_divergence,
        first_divergence,
        pass,
    })
}

/// Largest coordinate difference between matching evaluated points; a
/// length mismatch counts as infinite divergence at the first missing point.
fn point_divergence(a: &[TracePoint], b: &[TracePoint]) -> (f64, Option<u64>) {
    let mut max: f64 = 0.0;
    let mut first = None;
    for (i, (p, q)) in a.iter().zip(b).enumerate() {
        let d =
            p.x.iter()
                .zip(&q.x)
                .map(|(u, v)| (u - v).abs())
                .fold(0.0, f64::max);
        if d > 0.0 || d.is_nan() {
            first.get_or_insert(i as u64 + 1);
            max = max.max(if d.is_nan() { f64::INFINITY } else { d });
        }
    }
    if a.len() != b.len() {
        first.get_or_insert(a.len().min(b.len()) as u64 + 1);
        max = f64::INFINITY;
    }
    (max, first)
}

fn best_value_divergence(a: &[TracePoint], b: &[TracePoint]) -> (f64, Option<u64>) {
    let mut max: f64 = 0.0;
    let mut first = None;
    let (mut best_a, mut best_b) = (f64::INFINITY, f64::INFINITY);
    for (i, (p, q)) in a.iter().zip(b).enumerate() {
        best_a = best_a.min(p.f);
        best_b = best_b.min(q.f);
        let scale = best_a.abs().max(best_b.abs()).max(f64::MIN_POSITIVE);
        let d = (best_a - best_b).abs() / scale;
        if d > 0.0 {
            first.get_or_insert(i as u64 + 1);
            max = max.max(d);
        }
    }
    if a.len() != b.len() {
        first.get_or_insert(a.len().min(b.len()) as u64 + 1);
        max = f64::INFINITY;
    }
    (max, first)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::lookup;

    #[test]
    fn comparison_based_optimizers_are_monotone_invariant() {
        for name in ["cmaes", "de", "pso"] {
            let r = invariance_check(
                lookup(name).unwrap(),
                5,
                1e6,
                InvarianceMode::Monotone,
                7,
                30,
            )
            .unwrap();
            assert_eq!(r.max_divergence, 0.0, "{name}");
            assert!(r.pass && r.first_divergence.is_none());
            assert_eq!(
                r.evaluations,
                lookup(name).unwrap().iteration_cost(5).evals_for(30)
            );
        }
    }

    #[test]
    fn value_based_optimizers_are_not() {
        for name in ["bfgs", "trustregion"] {
            let opt = lookup(name).unwrap();
            let r = invariance_check(opt, 5, 1e6, InvarianceMode::Monotone, 7, 3).unwrap();
            assert!(r.max_divergence > 0.0, "{name}");
            assert!(!r.pass);
            assert!(r.first_divergence.unwrap() <= opt.iteration_cost(5).evals_for(3));
        }
    }

    #[test]
    fn rotation_mode() {
        for name in ["cmaes", "de"] {
            let r = invariance_check(
                lookup(name).unwrap(),
                5,
                1e4,
                InvarianceMode::Rotation,
                3,
                50,
            )
            .unwrap();
            assert!(r.pass, "{name}: {r:?}");
        }
        for name in ["pso", "bfgs", "trustregion"] {
            let e = invariance_check(
                lookup(name).unwrap(),
                5,
                1e4,
                InvarianceMode::Rotation,
                3,
                5,
            );
            assert!(
                matches!(e, Err(InvarianceError::Unsupported { .. })),
                "{name}"
            );
        }
    }

    #[test]
    fn divergence_helpers() {
        let tp = |x: f64, f: f64| TracePoint { x: vec![x], f };
        let a = vec![tp(1.0, 3.0), tp(2.0, 1.0)];
        assert_eq!(point_divergence(&a, &a), (0.0, None));
        let b = vec![tp(1.0, 3.0), tp(2.5, 2.0)];
        assert_eq!(point_divergence(&a, &b), (0.5, Some(2)));
        assert_eq!(best_value_divergence(&a, &b), (0.5, Some(2)));
        assert_eq!(point_divergence(&a, &a[..1]), (f64::INFINITY, Some(2)));
    }
}
