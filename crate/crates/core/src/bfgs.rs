//! BFGS with forward-difference gradients and a strong Wolfe line search.
//!
//! Every function value, including those spent on gradient estimates, goes
//! through the shared evaluator and counts against the budget.

use nalgebra::{DMatrix, DVector};

use crate::eval::{BudgetExhausted, BudgetedEvaluator, Objective, RunRecord, Termination};
use crate::optimizer::{IterationCost, Optimizer};
use crate::rng::RngStream;

/// Sufficient-decrease constant.
pub const ARMIJO_C1: f64 = 1e-4;
/// Curvature constant.
pub const CURVATURE_C2: f64 = 0.9;
/// Trial step lengths allowed per line search.
pub const MAX_LINE_SEARCH_TRIALS: usize = 50;
/// Stop when one iteration improves `f` by less than this.
pub const IMPROVEMENT_TOL: f64 = 1e-25;
pub const GRADIENT_TOL: f64 = 1e-12;
/// Updates with `s^T y` at or below this are skipped.
pub const CURVATURE_FLOOR: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum LineSearchError {
    #[error("evaluation budget exhausted")]
    Budget,
    #[error("no step satisfying the Wolfe conditions within the trial bound")]
    NoAdmissibleStep,
    #[error("non-finite value or gradient")]
    NonFinite,
    #[error("direction is not a descent direction")]
    NotDescent,
}

impl From<BudgetExhausted> for LineSearchError {
    fn from(_: BudgetExhausted) -> Self {
        LineSearchError::Budget
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BfgsState {
    pub x: Vec<f64>,
    pub h_inv: DMatrix<f64>,
    pub g: Vec<f64>,
    pub f: f64,
    pub iteration: u64,
    /// Updates skipped because `s^T y` was too small.
    pub skipped_updates: u64,
}

/// Forward differences with `h_i = sqrt(eps) max(1, |x_i|)`. `fx = f(x)` is
/// reused, so this costs `n` evaluations.
pub fn numerical_gradient(
    ev: &mut BudgetedEvaluator<'_>,
    x: &[f64],
    fx: f64,
) -> Result<Vec<f64>, BudgetExhausted> {
    let root_eps = f64::EPSILON.sqrt();
    let mut probe = x.to_vec();
    let mut g = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let step = root_eps * x[i].abs().max(1.0);
        probe[i] = x[i] + step;
        // The representable step actually taken.
        let h = probe[i] - x[i];
        let fp = ev.evaluate(&probe)?;
        g.push((fp - fx) / h);
        probe[i] = x[i];
    }
    Ok(g)
}

/// Inverse-Hessian update. Returns false (and leaves `h_inv` unchanged) when
/// the curvature condition fails.
pub fn bfgs_update(h_inv: &mut DMatrix<f64>, s: &[f64], y: &[f64]) -> bool {
    let s = DVector::from_column_slice(s);
    let y = DVector::from_column_slice(y);
    let sy = s.dot(&y);
    if !(sy > CURVATURE_FLOOR) {
        return false;
    }
    let rho = 1.0 / sy;
    let hy = &*h_inv * &y;
    let yhy = y.dot(&hy);
    // (I - rho s y^T) H (I - rho y s^T) + rho s s^T, expanded.
    let mut next = h_inv.clone();
    next -= (&s * hy.transpose() + &hy * s.transpose()) * rho;
    next += (&s * s.transpose()) * (rho * rho * yhy + rho);
    let n = next.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (next[(i, j)] + next[(j, i)]);
            next[(i, j)] = v;
            next[(j, i)] = v;
        }
    }
    *h_inv = next;
    true
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineSearchResult {
    pub step: f64,
    pub x: Vec<f64>,
    pub f: f64,
    pub g: Vec<f64>,
}

struct Probe {
    a: f64,
    f: f64,
    /// Directional derivative, when the gradient there is known.
    dphi: Option<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn point(x: &[f64], d: &[f64], a: f64) -> Vec<f64> {
    x.iter().zip(d).map(|(xi, di)| xi + a * di).collect()
}

/// Strong Wolfe line search (bracketing then zoom with safeguarded quadratic
/// interpolation). `f` and `g` are the value and gradient at `x`.
pub fn wolfe_line_search(
    ev: &mut BudgetedEvaluator<'_>,
    x: &[f64],
    direction: &[f64],
    f: f64,
    g: &[f64],
) -> Result<LineSearchResult, LineSearchError> {
    let dphi0 = dot(g, direction);
    if !(dphi0 < 0.0) {
        return Err(LineSearchError::NotDescent);
    }
    let mut trials = 0usize;
    let eval_at =
        |ev: &mut BudgetedEvaluator<'_>, a: f64| -> Result<(Vec<f64>, f64), LineSearchError> {
            let xa = point(x, direction, a);
            let fa = ev.evaluate(&xa)?;
            Ok((xa, if fa.is_nan() { f64::INFINITY } else { fa }))
        };
    let armijo = |a: f64, fa: f64| fa <= f + ARMIJO_C1 * a * dphi0;
    let curvature = |dphi: f64| dphi.abs() <= -CURVATURE_C2 * dphi0;

    let mut prev = Probe {
        a: 0.0,
        f,
        dphi: Some(dphi0),
    };
    let mut a = 1.0;
    let (lo, hi) = loop {
        if trials >= MAX_LINE_SEARCH_TRIALS {
            return Err(LineSearchError::NoAdmissibleStep);
        }
        trials += 1;
        let (xa, fa) = eval_at(ev, a)?;
        if !armijo(a, fa) || (trials > 1 && fa >= prev.f) {
            break (
                prev,
                Probe {
                    a,
                    f: fa,
                    dphi: None,
                },
            );
        }
        let ga = numerical_gradient(ev, &xa, fa)?;
        if ga.iter().any(|v| !v.is_finite()) {
            return Err(LineSearchError::NonFinite);
        }
        let dphi = dot(&ga, direction);
        if curvature(dphi) {
            return Ok(LineSearchResult {
                step: a,
                x: xa,
                f: fa,
                g: ga,
            });
        }
        let here = Probe {
            a,
            f: fa,
            dphi: Some(dphi),
        };
        if dphi >= 0.0 {
            break (here, prev);
        }
        prev = here;
        a *= 2.0;
    };

    // Zoom. `lo` always satisfies Armijo and has the lowest value seen;
    // its derivative is known.
    let (mut lo, mut hi) = (lo, hi);
    loop {
        if trials >= MAX_LINE_SEARCH_TRIALS {
            return Err(LineSearchError::NoAdmissibleStep);
        }
        trials += 1;
        let width = hi.a - lo.a;
        let dlo = lo.dphi.expect("zoom low end carries a derivative");
        let denom = 2.0 * (hi.f - lo.f - dlo * width);
        let mut a = lo.a - dlo * width * width / denom;
        let (left, right) = if width > 0.0 {
            (lo.a + 0.1 * width, lo.a + 0.9 * width)
        } else {
            (lo.a + 0.9 * width, lo.a + 0.1 * width)
        };
        if !a.is_finite() || a < left || a > right {
            a = lo.a + 0.5 * width;
        }
        if a == lo.a || a == hi.a {
            return Err(LineSearchError::NoAdmissibleStep);
        }
        let (xa, fa) = eval_at(ev, a)?;
        if !armijo(a, fa) || fa >= lo.f {
            hi = Probe {
                a,
                f: fa,
                dphi: None,
            };
            continue;
        }
        let ga = numerical_gradient(ev, &xa, fa)?;
        if ga.iter().any(|v| !v.is_finite()) {
            return Err(LineSearchError::NonFinite);
        }
        let dphi = dot(&ga, direction);
        if curvature(dphi) {
            return Ok(LineSearchResult {
                step: a,
                x: xa,
                f: fa,
                g: ga,
            });
        }
        let here = Probe {
            a,
            f: fa,
            dphi: Some(dphi),
        };
        if dphi * (hi.a - lo.a) >= 0.0 {
            hi = lo;
        }
        lo = here;
    }
}

impl BfgsState {
    /// Evaluate `f` and its gradient at `x0`; `h_inv = I`.
    pub fn start(ev: &mut BudgetedEvaluator<'_>, x0: Vec<f64>) -> Result<Self, BudgetExhausted> {
        let f = ev.evaluate(&x0)?;
        let g = numerical_gradient(ev, &x0, f)?;
        let n = x0.len();
        Ok(Self {
            x: x0,
            h_inv: DMatrix::identity(n, n),
            g,
            f,
            iteration: 0,
            skipped_updates: 0,
        })
    }

    /// `-h_inv g`, falling back to steepest descent (and resetting `h_inv`)
    /// when that is not a descent direction.
    pub fn direction(&mut self) -> Vec<f64> {
        let g = DVector::from_column_slice(&self.g);
        let d = -(&self.h_inv * &g);
        if d.dot(&g) < 0.0 {
            return d.iter().copied().collect();
        }
        let n = self.x.len();
        self.h_inv = DMatrix::identity(n, n);
        self.g.iter().map(|v| -v).collect()
    }

    /// One quasi-Newton iteration. Returns the improvement in `f`.
    pub fn iterate(&mut self, ev: &mut BudgetedEvaluator<'_>) -> Result<f64, LineSearchError> {
        let d = self.direction();
        let ls = wolfe_line_search(ev, &self.x, &d, self.f, &self.g)?;
        let s: Vec<f64> = ls.x.iter().zip(&self.x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = ls.g.iter().zip(&self.g).map(|(a, b)| a - b).collect();
        if self.iteration == 0 {
            // Scale the initial identity before the first update.
            let yy = dot(&y, &y);
            let sy = dot(&s, &y);
            if sy > CURVATURE_FLOOR && yy > 0.0 {
                self.h_inv *= sy / yy;
            }
        }
        if !bfgs_update(&mut self.h_inv, &s, &y) {
            self.skipped_updates += 1;
        }
        let improvement = self.f - ls.f;
        self.x = ls.x;
        self.f = ls.f;
        self.g = ls.g;
        self.iteration += 1;
        Ok(improvement)
    }

    pub fn gradient_norm(&self) -> f64 {
        dot(&self.g, &self.g).sqrt()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Bfgs;

impl Bfgs {
    pub const DEFAULT: Bfgs = Bfgs;
}

impl Optimizer for Bfgs {
    fn name(&self) -> &'static str {
        "bfgs"
    }

    fn minimize(&self, ev: &mut BudgetedEvaluator<'_>, rng: &mut RngStream) -> Termination {
        let n = ev.dim();
        let (lo, hi) = ev.objective().init_bounds();
        let x0 = rng.uniform_vec(n, lo, hi);
        let Ok(mut state) = BfgsState::start(ev, x0) else {
            return ev.stop_reason();
        };
        loop {
            if ev.should_stop() {
                return ev.stop_reason();
            }
            if !state.f.is_finite() || state.g.iter().any(|v| !v.is_finite()) {
                return Termination::LineSearchFailed;
            }
            if state.gradient_norm() < GRADIENT_TOL {
                return Termination::Converged;
            }
            match state.iterate(ev) {
                Ok(improvement) if improvement < IMPROVEMENT_TOL => {
                    return if ev.should_stop() {
                        ev.stop_reason()
                    } else {
                        Termination::Converged
                    };
                }
                Ok(_) => {}
                Err(LineSearchError::Budget) => return ev.stop_reason(),
                Err(_) if ev.should_stop() => return ev.stop_reason(),
                Err(_) => return Termination::LineSearchFailed,
            }
        }
    }

    fn restart_on_stall(&self) -> bool {
        true
    }

    fn iteration_cost(&self, n: usize) -> IterationCost {
        IterationCost {
            init: n as u64 + 1,
            per_iteration: n as u64 + 1,
        }
    }

    fn describe(&self, _n: usize) -> String {
        format!(
            "bfgs: forward-difference gradients, strong Wolfe c1={ARMIJO_C1} c2={CURVATURE_C2}, improvement tol {IMPROVEMENT_TOL:e}, restarts on stall"
        )
    }
}

/// One BFGS start on `objective` (no restarts).
pub fn run(objective: &dyn Objective, budget: u64, rng: &mut RngStream) -> RunRecord {
    crate::optimizer::run(&Bfgs, objective, budget, rng)
}
