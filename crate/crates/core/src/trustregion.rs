//! Derivative-free trust-region method with a quadratic interpolation model
//! on `2n + 1` points.
//!
//! The model is `q(x) = f_c + g^T (x - c) + (x - c)^T H (x - c) / 2` around the
//! best point `c`. It starts from the `{x0, x0 +- rho e_i}` design (central
//! differences and a diagonal Hessian) and, after every new evaluation, is
//! refitted so that it interpolates the current point set while changing `H`
//! as little as possible in Frobenius norm. Steps come from truncated
//! conjugate gradients inside the trust region.
//!
//! Radius management: `rho` is the resolution (non-increasing, from
//! `rho_beg` down to `rho_end`), `delta >= rho` the working radius. A step
//! with agreement ratio below 0.1 halves `delta`; once `delta` sits at `rho`
//! and the model stops making progress, the farthest point is first pulled
//! in to distance `rho` if it lies beyond `2 rho`, otherwise `rho` drops by a
//! factor of ten.

use nalgebra::{DMatrix, DVector};

use crate::eval::{BudgetExhausted, BudgetedEvaluator, Objective, RunRecord, Termination};
use crate::optimizer::{IterationCost, Optimizer};
use crate::rng::RngStream;

/// Agreement ratio below which a step counts as poor.
pub const ACCEPT_RATIO: f64 = 0.1;
/// Agreement ratio above which the radius may grow.
pub const EXPAND_RATIO: f64 = 0.7;
pub const SHRINK_FACTOR: f64 = 0.5;
pub const RHO_FACTOR: f64 = 10.0;
/// Smallest predicted reduction treated as a real prediction.
pub const MIN_PREDICTED: f64 = 1e-300;
/// Interpolation tolerance, relative to `max(1, |f|)`.
pub const INTERPOLATION_TOL: f64 = 1e-8;
/// LU pivot ratio below which the point set counts as degenerate.
const POISEDNESS_FLOOR: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrConfig {
    pub m: usize,
    pub rho_beg: f64,
    pub rho_end: f64,
}

impl TrConfig {
    pub fn for_dim(n: usize) -> Self {
        Self {
            m: 2 * n + 1,
            rho_beg: 100.0,
            rho_end: 1e-15,
        }
    }
}

/// Interpolation set plus the quadratic model around its best point.
#[derive(Debug, Clone, PartialEq)]
pub struct TrModel {
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    /// Index of the best point; the model is expanded around it.
    pub center: usize,
    pub grad_model: DVector<f64>,
    pub hess_model: DMatrix<f64>,
    pub rho: f64,
    pub delta: f64,
    /// Full design rebuilds after a degenerate refit.
    pub rebuilds: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("interpolation set is degenerate")]
pub struct Degenerate;

/// Factored minimum-Frobenius interpolation system.
struct Kkt {
    scale: f64,
    u: Vec<DVector<f64>>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl Kkt {
    /// Multipliers, constant and linear term for interpolating `rhs`.
    fn solve(&self, rhs: &[f64]) -> Result<DVector<f64>, Degenerate> {
        let m = self.u.len();
        let n = self.u[0].len();
        let mut b = DVector::zeros(m + n + 1);
        for (i, r) in rhs.iter().enumerate() {
            b[i] = *r;
        }
        let sol = self.lu.solve(&b).ok_or(Degenerate)?;
        if sol.iter().any(|v| !v.is_finite()) {
            return Err(Degenerate);
        }
        Ok(sol)
    }

    /// Value at scaled offset `v` of the quadratic described by `sol`.
    fn value(&self, sol: &DVector<f64>, v: &DVector<f64>) -> f64 {
        let m = self.u.len();
        let lin = sol[m] + (0..v.len()).map(|k| sol[m + 1 + k] * v[k]).sum::<f64>();
        let quad: f64 = self
            .u
            .iter()
            .enumerate()
            .map(|(j, uj)| {
                let d = uj.dot(v);
                sol[j] * d * d
            })
            .sum();
        lin + 0.5 * quad
    }
}

/// What one call to [`TrModel::iterate`] did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrOutcome {
    /// Trust-region step evaluated; carries the agreement ratio.
    Step { ratio: f64 },
    /// A far point was pulled in to improve the geometry.
    Geometry,
    /// `rho` was reduced.
    RhoReduced,
    /// `rho` is already at `rho_end` and cannot shrink further.
    Finished,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Truncated conjugate gradients (Steihaug) for
/// `min g^T s + s^T H s / 2` subject to `|s| <= delta`.
/// Returns the step and the predicted reduction (never negative).
pub fn solve_subproblem(g: &DVector<f64>, h: &DMatrix<f64>, delta: f64) -> (DVector<f64>, f64) {
    let n = g.len();
    let mut s = DVector::zeros(n);
    let g_norm = g.norm();
    if g_norm == 0.0 || !(delta > 0.0) {
        // Zero gradient: only negative curvature could still help.
        if delta > 0.0 {
            if let Some((s_neg, pred)) = negative_curvature_step(h, delta) {
                return (s_neg, pred);
            }
        }
        return (s, 0.0);
    }
    let mut r = g.clone();
    let mut p = -g.clone();
    let tol = 1e-12 * g_norm;
    for _ in 0..(2 * n + 2) {
        let hp = h * &p;
        let curv = p.dot(&hp);
        let rr = r.dot(&r);
        if curv <= 0.0 {
            s += &p * boundary_root(&s, &p, delta);
            break;
        }
        let alpha = rr / curv;
        let s_next = &s + &p * alpha;
        if s_next.norm() >= delta {
            s += &p * boundary_root(&s, &p, delta);
            break;
        }
        s = s_next;
        r += &hp * alpha;
        if r.norm() < tol {
            break;
        }
        let beta = r.dot(&r) / rr;
        p = -&r + &p * beta;
    }
    let pred = -(g.dot(&s) + 0.5 * s.dot(&(h * &s)));
    (s, pred.max(0.0))
}

/// Positive `tau` with `|s + tau p| = delta`.
fn boundary_root(s: &DVector<f64>, p: &DVector<f64>, delta: f64) -> f64 {
    let a = p.dot(p);
    let b = 2.0 * s.dot(p);
    let c = s.dot(s) - delta * delta;
    let disc = (b * b - 4.0 * a * c).max(0.0).sqrt();
    // Stable form of (-b + disc) / 2a.
    if b >= 0.0 {
        -2.0 * c / (b + disc)
    } else {
        (-b + disc) / (2.0 * a)
    }
}

fn negative_curvature_step(h: &DMatrix<f64>, delta: f64) -> Option<(DVector<f64>, f64)> {
    let eig = nalgebra::SymmetricEigen::new(h.clone());
    let (k, &lam) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    if lam >= 0.0 {
        return None;
    }
    let s = eig.eigenvectors.column(k) * delta;
    Some((s.into_owned(), -0.5 * lam * delta * delta))
}

impl TrModel {
    /// Evaluate the initial design around `x0` and build the model.
    pub fn init(
        config: &TrConfig,
        ev: &mut BudgetedEvaluator<'_>,
        x0: Vec<f64>,
    ) -> Result<Self, BudgetExhausted> {
        let n = x0.len();
        let f0 = ev.evaluate(&x0)?;
        let mut points = vec![x0.clone()];
        let mut values = vec![f0];
        let rho = config.rho_beg;
        let mut grad = DVector::zeros(n);
        let mut hess = DMatrix::zeros(n, n);
        for i in 0..n {
            let mut plus = x0.clone();
            plus[i] += rho;
            let mut minus = x0.clone();
            minus[i] -= rho;
            let fp = ev.evaluate(&plus)?;
            let fm = ev.evaluate(&minus)?;
            grad[i] = (fp - fm) / (2.0 * rho);
            hess[(i, i)] = (fp - 2.0 * f0 + fm) / (rho * rho);
            points.push(plus);
            values.push(fp);
            points.push(minus);
            values.push(fm);
        }
        let mut model = Self {
            points,
            values,
            center: 0,
            grad_model: grad,
            hess_model: hess,
            rho,
            delta: rho,
            rebuilds: 0,
        };
        // Move the expansion to the best design point if it is not x0.
        let best = model.argmin();
        if best != 0 {
            model.recenter(best);
        }
        Ok(model)
    }

    pub fn dim(&self) -> usize {
        self.grad_model.len()
    }

    pub fn center_point(&self) -> &[f64] {
        &self.points[self.center]
    }

    pub fn center_value(&self) -> f64 {
        self.values[self.center]
    }

    fn argmin(&self) -> usize {
        let mut best = 0;
        for i in 1..self.values.len() {
            if self.values[i] < self.values[best] {
                best = i;
            }
        }
        best
    }

    /// Model value at `x`.
    pub fn model_value(&self, x: &[f64]) -> f64 {
        let d = DVector::from_iterator(
            x.len(),
            x.iter().zip(self.center_point()).map(|(a, c)| a - c),
        );
        self.center_value() + self.grad_model.dot(&d) + 0.5 * d.dot(&(&self.hess_model * &d))
    }

    /// Worst interpolation error relative to `max(1, |f|)`.
    pub fn interpolation_error(&self) -> f64 {
        self.points
            .iter()
            .zip(&self.values)
            .map(|(p, v)| (self.model_value(p) - v).abs() / v.abs().max(1.0))
            .fold(0.0, f64::max)
    }

    /// Re-express the model around point `k` (value taken from the set).
    fn recenter(&mut self, k: usize) {
        let shift = DVector::from_iterator(
            self.dim(),
            self.points[k]
                .iter()
                .zip(self.center_point())
                .map(|(a, c)| a - c),
        );
        self.grad_model += &self.hess_model * &shift;
        self.center = k;
    }

    /// Interpolation system of the current set, in coordinates centered on
    /// the best point and scaled by the largest distance from it.
    fn kkt(&self) -> Result<Kkt, Degenerate> {
        let n = self.dim();
        let m = self.points.len();
        let c = self.center_point().to_vec();
        let scale = self.points.iter().map(|p| dist(p, &c)).fold(0.0, f64::max);
        if !(scale > 0.0) {
            return Err(Degenerate);
        }
        let u: Vec<DVector<f64>> = self
            .points
            .iter()
            .map(|p| DVector::from_iterator(n, p.iter().zip(&c).map(|(a, b)| (a - b) / scale)))
            .collect();
        let size = m + n + 1;
        let mut mat = DMatrix::zeros(size, size);
        for i in 0..m {
            for j in 0..=i {
                let d = u[i].dot(&u[j]);
                let a = 0.5 * d * d;
                mat[(i, j)] = a;
                mat[(j, i)] = a;
            }
            mat[(i, m)] = 1.0;
            mat[(m, i)] = 1.0;
            for k in 0..n {
                mat[(i, m + 1 + k)] = u[i][k];
                mat[(m + 1 + k, i)] = u[i][k];
            }
        }
        let lu = mat.lu();
        let diag = lu.u().diagonal();
        let max_pivot = diag.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let min_pivot = diag.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
        if !(min_pivot > POISEDNESS_FLOOR * max_pivot) {
            return Err(Degenerate);
        }
        Ok(Kkt { scale, u, lu })
    }

    /// Refit so the model interpolates every point with the smallest
    /// Frobenius-norm change to the Hessian.
    pub fn refit(&mut self) -> Result<(), Degenerate> {
        let n = self.dim();
        let m = self.points.len();
        let kkt = self.kkt()?;
        let residual: Vec<f64> = self
            .points
            .iter()
            .zip(&self.values)
            .map(|(p, v)| v - self.model_value(p))
            .collect();
        let sol = kkt.solve(&residual)?;
        let (scale, u) = (kkt.scale, &kkt.u);
        let mut dh = DMatrix::zeros(n, n);
        for j in 0..m {
            dh += (&u[j] * u[j].transpose()) * sol[j];
        }
        let dg = DVector::from_iterator(n, (0..n).map(|k| sol[m + 1 + k]));
        // Undo the scaling. The constant term is zero at the center, which
        // is itself an interpolation point.
        self.grad_model += dg / scale;
        self.hess_model += dh / (scale * scale);
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (self.hess_model[(i, j)] + self.hess_model[(j, i)]);
                self.hess_model[(i, j)] = v;
                self.hess_model[(j, i)] = v;
            }
        }
        if !(self.interpolation_error() <= INTERPOLATION_TOL) {
            return Err(Degenerate);
        }
        Ok(())
    }

    /// Replace the design by `{c, c +- rho e_i}` and refit.
    fn rebuild(&mut self, ev: &mut BudgetedEvaluator<'_>) -> Result<(), BudgetExhausted> {
        self.rebuilds += 1;
        let c = self.center_point().to_vec();
        let fc = self.center_value();
        let n = self.dim();
        let mut points = vec![c.clone()];
        let mut values = vec![fc];
        let mut grad = DVector::zeros(n);
        let mut diag = DVector::zeros(n);
        for i in 0..n {
            let mut plus = c.clone();
            plus[i] += self.rho;
            let mut minus = c.clone();
            minus[i] -= self.rho;
            let fp = ev.evaluate(&plus)?;
            let fm = ev.evaluate(&minus)?;
            grad[i] = (fp - fm) / (2.0 * self.rho);
            diag[i] = (fp - 2.0 * fc + fm) / (self.rho * self.rho);
            points.push(plus);
            values.push(fp);
            points.push(minus);
            values.push(fm);
        }
        self.points = points;
        self.values = values;
        self.center = 0;
        if self.refit().is_err() {
            // The design is interpolated exactly by the diagonal model.
            self.grad_model = grad;
            self.hess_model = DMatrix::from_diagonal(&diag);
        }
        let best = self.argmin();
        if best != self.center {
            self.recenter(best);
        }
        Ok(())
    }

    /// Insert `x` (value `f`), replacing the point farthest from the new best.
    fn insert(&mut self, x: Vec<f64>, f: f64) {
        let new_center = if f < self.center_value() {
            None
        } else {
            Some(self.center)
        };
        let anchor: &[f64] = match new_center {
            Some(k) => &self.points[k],
            None => &x,
        };
        let mut far = usize::MAX;
        let mut far_d = -1.0;
        for (i, p) in self.points.iter().enumerate() {
            if Some(i) == new_center {
                continue;
            }
            let d = dist(p, anchor);
            if d > far_d {
                far_d = d;
                far = i;
            }
        }
        self.points[far] = x;
        self.values[far] = f;
        if new_center.is_none() {
            self.recenter(far);
        }
    }

    fn farthest(&self) -> (usize, f64) {
        let c = self.center_point();
        self.points
            .iter()
            .enumerate()
            .map(|(i, p)| (i, dist(p, c)))
            .fold((self.center, 0.0), |a, b| if b.1 > a.1 { b } else { a })
    }

    fn refit_or_rebuild(&mut self, ev: &mut BudgetedEvaluator<'_>) -> Result<(), BudgetExhausted> {
        if self.refit().is_err() {
            self.rebuild(ev)?;
        }
        Ok(())
    }

    /// Replacement for point `k` (at distance `d` from the center) on the
    /// sphere of radius `rho`, chosen to make the Lagrange function of `k`
    /// as large as possible over a set of candidate directions.
    fn geometry_point(&self, k: usize, d: f64) -> Vec<f64> {
        let c = self.center_point();
        let radial: Vec<f64> = self.points[k]
            .iter()
            .zip(c)
            .map(|(p, ci)| ci + self.rho * (p - ci) / d)
            .collect();
        let Ok(kkt) = self.kkt() else {
            return radial;
        };
        let mut e = vec![0.0; self.points.len()];
        e[k] = 1.0;
        let Ok(sol) = kkt.solve(&e) else {
            return radial;
        };
        let n = self.dim();
        let m = self.points.len();
        let grad = DVector::from_iterator(n, (0..n).map(|i| sol[m + 1 + i]));
        let mut dirs: Vec<DVector<f64>> = kkt
            .u
            .iter()
            .filter(|v| v.norm() > 0.0)
            .map(|v| v.normalize())
            .collect();
        if grad.norm() > 0.0 {
            dirs.push(grad.normalize());
        }
        let r = self.rho / kkt.scale;
        let mut best = (f64::NEG_INFINITY, DVector::zeros(n));
        for dir in dirs {
            for sign in [1.0, -1.0] {
                let v = &dir * (sign * r);
                let l = kkt.value(&sol, &v).abs();
                if l > best.0 {
                    best = (l, v);
                }
            }
        }
        if !best.0.is_finite() {
            return radial;
        }
        c.iter()
            .zip(best.1.iter())
            .map(|(ci, vi)| ci + kkt.scale * vi)
            .collect()
    }

    /// Pull the farthest point to distance `rho` if it lies beyond `2 rho`,
    /// otherwise shrink `rho`.
    fn improve_or_shrink(
        &mut self,
        config: &TrConfig,
        ev: &mut BudgetedEvaluator<'_>,
    ) -> Result<TrOutcome, BudgetExhausted> {
        let (far, d) = self.farthest();
        if d > 2.0 * self.rho {
            let x = self.geometry_point(far, d);
            let f = ev.evaluate(&x)?;
            self.points[far] = x;
            self.values[far] = f;
            if f < self.center_value() {
                self.recenter(far);
            }
            self.refit_or_rebuild(ev)?;
            return Ok(TrOutcome::Geometry);
        }
        if self.rho <= config.rho_end {
            return Ok(TrOutcome::Finished);
        }
        let old = self.rho;
        self.rho = (self.rho / RHO_FACTOR).max(config.rho_end);
        self.delta = (0.5 * old).max(self.rho);
        Ok(TrOutcome::RhoReduced)
    }

    /// Step: solve the subproblem, evaluate, update radius and model.
    pub fn iterate(
        &mut self,
        config: &TrConfig,
        ev: &mut BudgetedEvaluator<'_>,
    ) -> Result<TrOutcome, BudgetExhausted> {
        let (step, pred) = solve_subproblem(&self.grad_model, &self.hess_model, self.delta);
        let step_norm = step.norm();
        if step_norm < 0.5 * self.rho || !(pred > MIN_PREDICTED) {
            self.delta = self.rho;
            return self.improve_or_shrink(config, ev);
        }
        let x: Vec<f64> = self
            .center_point()
            .iter()
            .zip(step.iter())
            .map(|(c, s)| c + s)
            .collect();
        self.update(config, ev, x, step_norm, pred)
    }

    /// Evaluate the trial point `x` reached by a step of length `step_norm`
    /// with predicted reduction `pred`, then update radius and model.
    pub fn update(
        &mut self,
        config: &TrConfig,
        ev: &mut BudgetedEvaluator<'_>,
        x: Vec<f64>,
        step_norm: f64,
        pred: f64,
    ) -> Result<TrOutcome, BudgetExhausted> {
        let at_floor = self.delta <= self.rho;
        let f = ev.evaluate(&x)?;
        let ratio = if pred > MIN_PREDICTED {
            (self.center_value() - f) / pred
        } else {
            f64::NEG_INFINITY
        };
        let ratio = if ratio.is_nan() {
            f64::NEG_INFINITY
        } else {
            ratio
        };
        self.delta = if ratio < ACCEPT_RATIO {
            SHRINK_FACTOR * self.delta
        } else if ratio <= EXPAND_RATIO {
            (SHRINK_FACTOR * self.delta).max(step_norm)
        } else {
            (SHRINK_FACTOR * self.delta).max(2.0 * step_norm)
        };
        if self.delta < 1.5 * self.rho {
            self.delta = self.rho;
        }
        if f.is_finite() {
            self.insert(x, f);
            self.refit_or_rebuild(ev)?;
        }
        if ratio < ACCEPT_RATIO && at_floor {
            if let TrOutcome::Finished = self.improve_or_shrink(config, ev)? {
                return Ok(TrOutcome::Finished);
            }
        }
        Ok(TrOutcome::Step { ratio })
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TrustRegion;

impl TrustRegion {
    pub const DEFAULT: TrustRegion = TrustRegion;
}

impl Optimizer for TrustRegion {
    fn name(&self) -> &'static str {
        "trustregion"
    }

    fn minimize(&self, ev: &mut BudgetedEvaluator<'_>, rng: &mut RngStream) -> Termination {
        let n = ev.dim();
        let config = TrConfig::for_dim(n);
        let (lo, hi) = ev.objective().init_bounds();
        let x0 = rng.uniform_vec(n, lo, hi);
        let Ok(mut model) = TrModel::init(&config, ev, x0) else {
            return ev.stop_reason();
        };
        loop {
            if ev.should_stop() {
                return ev.stop_reason();
            }
            match model.iterate(&config, ev) {
                Ok(TrOutcome::Finished) => return Termination::Converged,
                Ok(_) => {}
                Err(BudgetExhausted) => return ev.stop_reason(),
            }
        }
    }

    fn iteration_cost(&self, n: usize) -> IterationCost {
        IterationCost {
            init: 2 * n as u64 + 1,
            per_iteration: 1,
        }
    }

    fn describe(&self, n: usize) -> String {
        let c = TrConfig::for_dim(n);
        format!(
            "trustregion: m={} rho_beg={} rho_end={:e}",
            c.m, c.rho_beg, c.rho_end
        )
    }
}

/// One trust-region start on `objective`.
pub fn run(objective: &dyn Objective, budget: u64, rng: &mut RngStream) -> RunRecord {
    crate::optimizer::run(&TrustRegion, objective, budget, rng)
}
