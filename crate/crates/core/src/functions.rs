//! Benchmark functions: ellipsoid, ellipsoid to the power 1/4, and Rosenbrock,
//! each with a conditioning parameter and an optional orthogonal rotation
//! `y = B x`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::eval::Objective;
use crate::rng::RngStream;

pub const DEFAULT_INIT_LO: f64 = -20.0;
pub const DEFAULT_INIT_HI: f64 = 80.0;
pub const DEFAULT_TARGET: f64 = 1e-9;

/// Largest supported dimension.
pub const MAX_DIM: usize = 10_000;

/// Smallest ellipsoid value at which the quarter-power gradient is defined.
pub const QUARTER_GRADIENT_FLOOR: f64 = 1e-300;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FunctionError {
    #[error("dimension must be in [2, {MAX_DIM}], got {0}")]
    Dimension(usize),
    #[error("alpha {alpha} outside [1, {max:e}] for {kind}")]
    AlphaRange {
        kind: FunctionKind,
        alpha: f64,
        max: f64,
    },
    #[error("rotation is {got}x{got}, expected {want}x{want}")]
    RotationShape { got: usize, want: usize },
    #[error("matrix is not orthogonal (max |B^T B - I| = {0:e})")]
    NotOrthogonal(f64),
    #[error("initialization interval [{lo}, {hi}] is empty or not finite")]
    InitInterval { lo: f64, hi: f64 },
    #[error("unknown function `{0}` (expected one of: elli, elli-quarter, rosen)")]
    UnknownKind(String),
    #[error("gradient undefined for {0} at this point")]
    NoGradient(FunctionKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FunctionKind {
    #[serde(rename = "elli", alias = "ellipsoid")]
    Ellipsoid,
    #[serde(rename = "elli-quarter", alias = "ellipsoid-quarter")]
    EllipsoidQuarter,
    #[serde(rename = "rosen", alias = "rosenbrock")]
    Rosenbrock,
}

impl FunctionKind {
    pub const ALL: [FunctionKind; 3] = [
        FunctionKind::Ellipsoid,
        FunctionKind::EllipsoidQuarter,
        FunctionKind::Rosenbrock,
    ];

    /// Short name used in files and on the command line.
    pub fn name(self) -> &'static str {
        match self {
            FunctionKind::Ellipsoid => "elli",
            FunctionKind::EllipsoidQuarter => "elli-quarter",
            FunctionKind::Rosenbrock => "rosen",
        }
    }

    pub fn max_alpha(self) -> f64 {
        match self {
            FunctionKind::Rosenbrock => 1e8,
            _ => 1e10,
        }
    }

    /// Logarithmic alpha grid with one point per decade over the full range.
    pub fn default_alpha_grid(self) -> Vec<f64> {
        let decades = self.max_alpha().log10().round() as i32;
        (0..=decades).map(|k| 10f64.powi(k)).collect()
    }
}

impl fmt::Display for FunctionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FunctionKind {
    type Err = FunctionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "elli" | "ellipsoid" => Ok(FunctionKind::Ellipsoid),
            "elli-quarter" | "elliquarter" | "sqrtelli" => Ok(FunctionKind::EllipsoidQuarter),
            "rosen" | "rosenbrock" => Ok(FunctionKind::Rosenbrock),
            other => Err(FunctionError::UnknownKind(other.to_string())),
        }
    }
}

/// An n x n orthogonal matrix, checked on construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawOrthogonal", into = "RawOrthogonal")]
pub struct OrthogonalMatrix {
    n: usize,
    seed: u64,
    /// Row-major entries.
    rows: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawOrthogonal {
    n: usize,
    seed: u64,
    entries: Vec<f64>,
}

impl TryFrom<RawOrthogonal> for OrthogonalMatrix {
    type Error = FunctionError;

    fn try_from(raw: RawOrthogonal) -> Result<Self, Self::Error> {
        if raw.n == 0 || raw.entries.len() != raw.n.saturating_mul(raw.n) {
            let got = (raw.entries.len() as f64).sqrt() as usize;
            return Err(FunctionError::RotationShape { got, want: raw.n });
        }
        let m = DMatrix::from_row_slice(raw.n, raw.n, &raw.entries);
        OrthogonalMatrix::from_matrix(&m, raw.seed)
    }
}

impl From<OrthogonalMatrix> for RawOrthogonal {
    fn from(b: OrthogonalMatrix) -> Self {
        RawOrthogonal {
            n: b.n,
            seed: b.seed,
            entries: b.rows,
        }
    }
}

/// Tolerance on `max |B^T B - I|`.
pub const ORTHOGONALITY_TOL: f64 = 1e-12;

impl OrthogonalMatrix {
    pub fn identity(n: usize) -> Self {
        let m = DMatrix::identity(n, n);
        Self::from_matrix(&m, 0).expect("identity is orthogonal")
    }

    /// Wrap `m` after checking orthogonality.
    pub fn from_matrix(m: &DMatrix<f64>, seed: u64) -> Result<Self, FunctionError> {
        if m.nrows() != m.ncols() {
            return Err(FunctionError::RotationShape {
                got: m.nrows(),
                want: m.ncols(),
            });
        }
        let err = orthogonality_error(m);
        if !(err < ORTHOGONALITY_TOL) {
            return Err(FunctionError::NotOrthogonal(err));
        }
        let n = m.nrows();
        let rows = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)])
            .collect();
        Ok(Self { n, seed, rows })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i * self.n + j]
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.rows)
    }

    /// `B x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.apply_into(x, &mut y);
        y
    }

    pub fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        for (yi, row) in y.iter_mut().zip(self.rows.chunks_exact(self.n)) {
            *yi = row.iter().zip(x).map(|(b, v)| b * v).sum();
        }
    }

    /// `B^T y`.
    pub fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.n];
        for (yi, row) in y.iter().zip(self.rows.chunks_exact(self.n)) {
            for (xj, b) in x.iter_mut().zip(row) {
                *xj += b * yi;
            }
        }
        x
    }

    pub fn determinant(&self) -> f64 {
        self.to_matrix().determinant()
    }
}

/// `max |M^T M - I|`.
pub fn orthogonality_error(m: &DMatrix<f64>) -> f64 {
    let n = m.ncols();
    let gram = m.transpose() * m;
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let want = if i == j { 1.0 } else { 0.0 };
            let d = (gram[(i, j)] - want).abs();
            if d.is_nan() {
                return f64::NAN;
            }
            worst = worst.max(d);
        }
    }
    worst
}

/// Sample a random rotation: QR of an n x n standard Gaussian matrix, with
/// the signs of Q's columns fixed so that R has a positive diagonal. Entries
/// are drawn row by row. Each column of the result is uniform on the sphere.
pub fn make_rotation(n: usize, rng: &mut RngStream) -> OrthogonalMatrix {
    assert!(n >= 2, "rotation dimension must be at least 2");
    loop {
        let mut g = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                g[(i, j)] = rng.gaussian();
            }
        }
        let qr = g.qr();
        let r = qr.r();
        let diag_max = (0..n).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
        let diag_min = (0..n)
            .map(|i| r[(i, i)].abs())
            .fold(f64::INFINITY, f64::min);
        if !(diag_min > 1e-10 * diag_max) {
            continue;
        }
        let mut q = qr.q();
        for j in 0..n {
            if r[(j, j)] < 0.0 {
                q.column_mut(j).neg_mut();
            }
        }
        if let Ok(b) = OrthogonalMatrix::from_matrix(&q, rng.seed()) {
            return b;
        }
    }
}

/// A concrete benchmark problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct FunctionSpec {
    kind: FunctionKind,
    n: usize,
    alpha: f64,
    rotation: Option<OrthogonalMatrix>,
    init_lo: f64,
    init_hi: f64,
    target: f64,
    /// Per-coordinate ellipsoid weights `alpha^((i-1)/(n-1))`.
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawSpec {
    kind: FunctionKind,
    n: usize,
    alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rotation: Option<OrthogonalMatrix>,
    #[serde(default = "default_lo")]
    init_lo: f64,
    #[serde(default = "default_hi")]
    init_hi: f64,
    #[serde(default = "default_target")]
    target: f64,
}

fn default_lo() -> f64 {
    DEFAULT_INIT_LO
}
fn default_hi() -> f64 {
    DEFAULT_INIT_HI
}
fn default_target() -> f64 {
    DEFAULT_TARGET
}

impl TryFrom<RawSpec> for FunctionSpec {
    type Error = FunctionError;

    fn try_from(raw: RawSpec) -> Result<Self, Self::Error> {
        let mut spec = FunctionSpec::new(raw.kind, raw.n, raw.alpha)?;
        if let Some(b) = raw.rotation {
            spec = spec.with_rotation(b)?;
        }
        if !(raw.init_lo.is_finite() && raw.init_hi.is_finite() && raw.init_lo < raw.init_hi) {
            return Err(FunctionError::InitInterval {
                lo: raw.init_lo,
                hi: raw.init_hi,
            });
        }
        spec.init_lo = raw.init_lo;
        spec.init_hi = raw.init_hi;
        spec.target = raw.target;
        Ok(spec)
    }
}

impl From<FunctionSpec> for RawSpec {
    fn from(s: FunctionSpec) -> Self {
        RawSpec {
            kind: s.kind,
            n: s.n,
            alpha: s.alpha,
            rotation: s.rotation,
            init_lo: s.init_lo,
            init_hi: s.init_hi,
            target: s.target,
        }
    }
}

impl FunctionSpec {
    /// Axis-parallel problem with the default interval and target.
    pub fn new(kind: FunctionKind, n: usize, alpha: f64) -> Result<Self, FunctionError> {
        if !(2..=MAX_DIM).contains(&n) {
            return Err(FunctionError::Dimension(n));
        }
        let max = kind.max_alpha();
        if !(1.0..=max).contains(&alpha) {
            return Err(FunctionError::AlphaRange { kind, alpha, max });
        }
        let weights = (0..n)
            .map(|i| alpha.powf(i as f64 / (n - 1) as f64))
            .collect();
        Ok(Self {
            kind,
            n,
            alpha,
            rotation: None,
            init_lo: DEFAULT_INIT_LO,
            init_hi: DEFAULT_INIT_HI,
            target: DEFAULT_TARGET,
            weights,
        })
    }

    /// The sphere: ellipsoid with `alpha = 1`.
    pub fn sphere(n: usize) -> Result<Self, FunctionError> {
        Self::new(FunctionKind::Ellipsoid, n, 1.0)
    }

    pub fn with_rotation(mut self, b: OrthogonalMatrix) -> Result<Self, FunctionError> {
        if b.dim() != self.n {
            return Err(FunctionError::RotationShape {
                got: b.dim(),
                want: self.n,
            });
        }
        self.rotation = Some(b);
        Ok(self)
    }

    pub fn with_target(mut self, target: f64) -> Self {
        self.target = target;
        self
    }

    pub fn kind(&self) -> FunctionKind {
        self.kind
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn rotation(&self) -> Option<&OrthogonalMatrix> {
        self.rotation.as_ref()
    }

    pub fn is_rotated(&self) -> bool {
        self.rotation.is_some()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn to_y(&self, x: &[f64]) -> Vec<f64> {
        match &self.rotation {
            Some(b) => b.apply(x),
            None => x.to_vec(),
        }
    }

    fn elli_y(&self, y: &[f64]) -> f64 {
        self.weights.iter().zip(y).map(|(w, v)| w * v * v).sum()
    }

    fn rosen_y(&self, y: &[f64]) -> f64 {
        y.windows(2)
            .map(|p| {
                let a = p[0] * p[0] - p[1];
                let b = p[0] - 1.0;
                self.alpha * a * a + b * b
            })
            .sum()
    }

    /// Value in the rotated coordinates `y`.
    pub fn eval_y(&self, y: &[f64]) -> f64 {
        match self.kind {
            FunctionKind::Ellipsoid => self.elli_y(y),
            // sqrt(sqrt(.)) is correctly rounded at each step, so the map
            // from ellipsoid values is monotone in floating point too.
            FunctionKind::EllipsoidQuarter => self.elli_y(y).sqrt().sqrt(),
            FunctionKind::Rosenbrock => self.rosen_y(y),
        }
    }

    /// Global minimizer and minimum value.
    pub fn optimum(&self) -> (Vec<f64>, f64) {
        let y_star = match self.kind {
            FunctionKind::Rosenbrock => vec![1.0; self.n],
            _ => vec![0.0; self.n],
        };
        let x_star = match &self.rotation {
            Some(b) => b.apply_transpose(&y_star),
            None => y_star,
        };
        (x_star, 0.0)
    }

    /// Exact gradient, `B^T grad_y f(y)`.
    pub fn analytic_gradient(&self, x: &[f64]) -> Result<Vec<f64>, FunctionError> {
        let y = self.to_y(x);
        let gy: Vec<f64> = match self.kind {
            FunctionKind::Ellipsoid => self.elli_grad_y(&y),
            FunctionKind::EllipsoidQuarter => {
                let f = self.elli_y(&y);
                if !(f > QUARTER_GRADIENT_FLOOR) {
                    return Err(FunctionError::NoGradient(self.kind));
                }
                let scale = 0.25 * f.powf(-0.75);
                self.elli_grad_y(&y)
                    .into_iter()
                    .map(|g| g * scale)
                    .collect()
            }
            FunctionKind::Rosenbrock => {
                let mut g = vec![0.0; self.n];
                for i in 0..self.n - 1 {
                    let a = y[i] * y[i] - y[i + 1];
                    g[i] += 4.0 * self.alpha * y[i] * a + 2.0 * (y[i] - 1.0);
                    g[i + 1] -= 2.0 * self.alpha * a;
                }
                g
            }
        };
        Ok(match &self.rotation {
            Some(b) => b.apply_transpose(&gy),
            None => gy,
        })
    }

    fn elli_grad_y(&self, y: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(y)
            .map(|(w, v)| 2.0 * w * v)
            .collect()
    }

    /// Compact description used in banners and file names.
    pub fn summary(&self) -> String {
        format!(
            "{}{} n={} alpha={:e}",
            self.kind,
            if self.is_rotated() { " (rotated)" } else { "" },
            self.n,
            self.alpha
        )
    }
}

impl Objective for FunctionSpec {
    fn dim(&self) -> usize {
        self.n
    }

    fn eval(&self, x: &[f64]) -> f64 {
        match &self.rotation {
            Some(b) => {
                let y = b.apply(x);
                self.eval_y(&y)
            }
            None => self.eval_y(x),
        }
    }

    fn target(&self) -> f64 {
        self.target
    }

    fn init_bounds(&self) -> (f64, f64) {
        (self.init_lo, self.init_hi)
    }
}

pub fn eval_elli(spec: &FunctionSpec, x: &[f64]) -> f64 {
    debug_assert_eq!(spec.kind, FunctionKind::Ellipsoid);
    spec.eval(x)
}

pub fn eval_elli_quarter(spec: &FunctionSpec, x: &[f64]) -> f64 {
    debug_assert_eq!(spec.kind, FunctionKind::EllipsoidQuarter);
    spec.eval(x)
}

pub fn eval_rosen(spec: &FunctionSpec, x: &[f64]) -> f64 {
    debug_assert_eq!(spec.kind, FunctionKind::Rosenbrock);
    spec.eval(x)
}

/// `g(f(x))` for a strictly increasing `g`; the target becomes `g(target)`.
pub struct Composed<O, G> {
    inner: O,
    g: G,
}

pub fn compose_monotone<O: Objective, G: Fn(f64) -> f64 + Sync>(inner: O, g: G) -> Composed<O, G> {
    Composed { inner, g }
}

impl<O: Objective, G: Fn(f64) -> f64 + Sync> Objective for Composed<O, G> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn eval(&self, x: &[f64]) -> f64 {
        (self.g)(self.inner.eval(x))
    }
    fn target(&self) -> f64 {
        (self.g)(self.inner.target())
    }
    fn init_bounds(&self) -> (f64, f64) {
        self.inner.init_bounds()
    }
}

/// The quarter-power map used to turn the ellipsoid into its non-convex twin.
pub fn quarter_power(v: f64) -> f64 {
    v.sqrt().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;
    use proptest::prelude::*;

    fn rotated(kind: FunctionKind, n: usize, alpha: f64, seed: u64) -> FunctionSpec {
        let b = make_rotation(n, &mut derive_stream(seed, 0));
        FunctionSpec::new(kind, n, alpha)
            .unwrap()
            .with_rotation(b)
            .unwrap()
    }

    #[test]
    fn rotation_is_orthogonal_with_unit_determinant() {
        for seed in 0..20 {
            for n in [2, 3, 7, 20] {
                let b = make_rotation(n, &mut derive_stream(seed, 1));
                assert!(orthogonality_error(&b.to_matrix()) < 1e-12);
                assert!((b.determinant().abs() - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rotation_is_deterministic() {
        let a = make_rotation(2, &mut derive_stream(5, 5));
        let b = make_rotation(2, &mut derive_stream(5, 5));
        assert_eq!(a, b);
    }

    #[test]
    fn rotation_first_column_is_centered() {
        let n = 10;
        let mut rng = derive_stream(11, 0);
        let mut mean = vec![0.0; n];
        let samples = 1000;
        for _ in 0..samples {
            let b = make_rotation(n, &mut rng);
            for (i, m) in mean.iter_mut().enumerate() {
                *m += b.get(i, 0) / samples as f64;
            }
        }
        let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 0.15, "mean norm {norm}");
    }

    #[test]
    fn non_orthogonal_matrix_is_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(matches!(
            OrthogonalMatrix::from_matrix(&m, 0),
            Err(FunctionError::NotOrthogonal(_))
        ));
    }

    #[test]
    fn ellipsoid_hand_values() {
        let s = FunctionSpec::new(FunctionKind::Ellipsoid, 2, 1e6).unwrap();
        assert_eq!(eval_elli(&s, &[1.0, 1.0]), 1.0 + 1e6);
        let r = rotated(FunctionKind::Ellipsoid, 5, 1e6, 3);
        let (x0, _) = r.optimum();
        assert_eq!(x0, vec![0.0; 5]);
        assert_eq!(r.eval(&x0), 0.0);
    }

    #[test]
    fn sphere_is_rotation_invariant() {
        for seed in 0..5 {
            let r = rotated(FunctionKind::Ellipsoid, 2, 1.0, seed);
            assert!((r.eval(&[3.0, 4.0]) - 25.0).abs() < 1e-12);
        }
    }

    #[test]
    fn quarter_hand_values() {
        let s = FunctionSpec::new(FunctionKind::EllipsoidQuarter, 2, 1e6).unwrap();
        let want = (1.0f64 + 1e6).powf(0.25);
        assert!((eval_elli_quarter(&s, &[1.0, 1.0]) - want).abs() <= 1e-15 * want);
        assert_eq!(s.eval(&[0.0, 0.0]), 0.0);
    }

    #[test]
    fn quarter_to_the_fourth_is_ellipsoid() {
        let mut rng = derive_stream(2, 2);
        let q = rotated(FunctionKind::EllipsoidQuarter, 6, 1e4, 8);
        let e = FunctionSpec::new(FunctionKind::Ellipsoid, 6, 1e4)
            .unwrap()
            .with_rotation(q.rotation().unwrap().clone())
            .unwrap();
        for _ in 0..100 {
            let x = rng.uniform_vec(6, -20.0, 80.0);
            let v = q.eval(&x).powi(4);
            let w = e.eval(&x);
            assert!((v - w).abs() <= 1e-12 * w);
        }
    }

    #[test]
    fn rosenbrock_hand_values() {
        let s = FunctionSpec::new(FunctionKind::Rosenbrock, 2, 100.0).unwrap();
        assert_eq!(eval_rosen(&s, &[1.0, 1.0]), 0.0);
        assert_eq!(eval_rosen(&s, &[0.0, 0.0]), 1.0);
        let r = rotated(FunctionKind::Rosenbrock, 8, 1e4, 1);
        let (x_star, f_star) = r.optimum();
        assert_eq!(f_star, 0.0);
        assert!(r.eval(&x_star) < 1e-20);
    }

    #[test]
    fn rosenbrock_optimum_axis() {
        let s = FunctionSpec::new(FunctionKind::Rosenbrock, 4, 100.0).unwrap();
        assert_eq!(s.optimum(), (vec![1.0; 4], 0.0));
    }

    #[test]
    fn alpha_and_dimension_validation() {
        assert_eq!(
            FunctionSpec::new(FunctionKind::Ellipsoid, 1, 1.0),
            Err(FunctionError::Dimension(1))
        );
        assert_eq!(
            FunctionSpec::new(FunctionKind::Rosenbrock, MAX_DIM + 1, 1.0),
            Err(FunctionError::Dimension(MAX_DIM + 1))
        );
        assert!(FunctionSpec::new(FunctionKind::Ellipsoid, 3, 1e10).is_ok());
        assert!(FunctionSpec::new(FunctionKind::Ellipsoid, 3, 1e12).is_err());
        assert!(FunctionSpec::new(FunctionKind::Rosenbrock, 3, 1e9).is_err());
        assert!(FunctionSpec::new(FunctionKind::Ellipsoid, 3, 0.5).is_err());
        assert!(FunctionSpec::new(FunctionKind::Ellipsoid, 3, f64::NAN).is_err());
    }

    #[test]
    fn gradient_hand_values() {
        let s = FunctionSpec::sphere(2).unwrap();
        assert_eq!(s.analytic_gradient(&[1.0, 2.0]).unwrap(), vec![2.0, 4.0]);
        let r = rotated(FunctionKind::Rosenbrock, 6, 1e4, 4);
        let (x_star, _) = r.optimum();
        let g = r.analytic_gradient(&x_star).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-8), "{g:?}");
    }

    #[test]
    fn quarter_gradient_undefined_at_origin() {
        let s = FunctionSpec::new(FunctionKind::EllipsoidQuarter, 3, 10.0).unwrap();
        assert!(s.analytic_gradient(&[0.0; 3]).is_err());
        assert!(s.analytic_gradient(&[1.0, 0.0, 0.0]).is_ok());
    }

    fn central_difference(s: &FunctionSpec, x: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let h = 1e-6 * x[i].abs().max(1.0);
                let mut p = x.to_vec();
                let mut m = x.to_vec();
                p[i] += h;
                m[i] -= h;
                (s.eval(&p) - s.eval(&m)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = derive_stream(3, 3);
        for (kind, alpha) in [
            (FunctionKind::Ellipsoid, 1e4),
            (FunctionKind::EllipsoidQuarter, 1e4),
            (FunctionKind::Rosenbrock, 100.0),
        ] {
            for rot in [false, true] {
                let s = if rot {
                    rotated(kind, 5, alpha, 9)
                } else {
                    FunctionSpec::new(kind, 5, alpha).unwrap()
                };
                for _ in 0..20 {
                    let x = rng.uniform_vec(5, -2.0, 3.0);
                    let ga = s.analytic_gradient(&x).unwrap();
                    let gn = central_difference(&s, &x);
                    let scale = ga.iter().map(|v| v.abs()).fold(0.0, f64::max);
                    for (a, b) in ga.iter().zip(&gn) {
                        assert!((a - b).abs() <= 1e-5 * scale, "{kind}: {a} vs {b}");
                    }
                }
            }
        }
    }

    #[test]
    fn compose_identity_and_quarter() {
        let e = FunctionSpec::new(FunctionKind::Ellipsoid, 4, 1e6).unwrap();
        let q = FunctionSpec::new(FunctionKind::EllipsoidQuarter, 4, 1e6).unwrap();
        let id = compose_monotone(&e, |v| v);
        let cq = compose_monotone(&e, quarter_power);
        let mut rng = derive_stream(0, 0);
        for _ in 0..50 {
            let x = rng.uniform_vec(4, -20.0, 80.0);
            assert_eq!(id.eval(&x).to_bits(), e.eval(&x).to_bits());
            assert_eq!(cq.eval(&x).to_bits(), q.eval(&x).to_bits());
        }
        assert_eq!(cq.target(), quarter_power(1e-9));
    }

    #[test]
    fn conditioning_spans_alpha() {
        for alpha in [1.0, 1e3, 1e10] {
            let s = FunctionSpec::new(FunctionKind::Ellipsoid, 7, alpha).unwrap();
            let diag: Vec<f64> = s.weights().iter().map(|w| 2.0 * w).collect();
            let hi = diag.iter().cloned().fold(0.0, f64::max);
            let lo = diag.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!((hi / lo - alpha).abs() <= 1e-12 * alpha);
        }
    }

    fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let c = b - phi * (b - a);
            let d = a + phi * (b - a);
            if f(c) < f(d) {
                b = d;
            } else {
                a = c;
            }
        }
        0.5 * (a + b)
    }

    #[test]
    fn axis_ellipsoid_is_separable() {
        let s = FunctionSpec::new(FunctionKind::Ellipsoid, 4, 1e6).unwrap();
        let mut rng = derive_stream(4, 4);
        let mut x = rng.uniform_vec(4, -20.0, 80.0);
        for i in (0..4).rev() {
            let base = x.clone();
            x[i] = golden_section(
                |t| {
                    let mut p = base.clone();
                    p[i] = t;
                    s.eval(&p)
                },
                -100.0,
                100.0,
            );
        }
        assert!(x.iter().all(|v| v.abs() < 1e-5), "{x:?}");
    }

    #[test]
    fn rosenbrock_local_minimum_near_minus_one() {
        for alpha in [100.0, 1e6] {
            let s = FunctionSpec::new(FunctionKind::Rosenbrock, 20, alpha).unwrap();
            let mut x = vec![1.0; 20];
            x[0] = -1.0;
            let mut fx = s.eval(&x);
            let mut step = 1e-3;
            for _ in 0..20_000 {
                let g = s.analytic_gradient(&x).unwrap();
                loop {
                    let trial: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - step * b).collect();
                    let ft = s.eval(&trial);
                    if ft < fx {
                        x = trial;
                        fx = ft;
                        step *= 1.5;
                        break;
                    }
                    step *= 0.5;
                    if step < 1e-30 {
                        break;
                    }
                }
            }
            assert!(fx > 1.0, "alpha {alpha}: f = {fx}");
        }
    }

    #[test]
    fn spec_serde_round_trip_and_validation() {
        let s = rotated(FunctionKind::Ellipsoid, 3, 1e4, 2);
        let text = serde_json::to_string(&s).unwrap();
        let back: FunctionSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
        let bad =
            r#"{"kind":"elli","n":2,"alpha":1.0,"rotation":{"n":2,"seed":0,"entries":[1,1,0,1]}}"#;
        assert!(serde_json::from_str::<FunctionSpec>(bad).is_err());
        let bad_alpha = r#"{"kind":"rosen","n":2,"alpha":1e9}"#;
        assert!(serde_json::from_str::<FunctionSpec>(bad_alpha).is_err());
    }

    proptest! {
        #[test]
        fn rotated_eval_equals_axis_eval_at_bx(seed in 0u64..1000, xs in proptest::collection::vec(-50.0..50.0f64, 4)) {
            for kind in FunctionKind::ALL {
                let r = rotated(kind, 4, 1e3, seed);
                let axis = FunctionSpec::new(kind, 4, 1e3).unwrap();
                let y = r.rotation().unwrap().apply(&xs);
                prop_assert_eq!(r.eval(&xs).to_bits(), axis.eval(&y).to_bits());
                prop_assert!(r.eval(&xs) >= 0.0);
            }
        }

        #[test]
        fn quarter_preserves_order(a in proptest::collection::vec(-50.0..50.0f64, 3),
                                   b in proptest::collection::vec(-50.0..50.0f64, 3)) {
            let e = FunctionSpec::new(FunctionKind::Ellipsoid, 3, 1e6).unwrap();
            let q = compose_monotone(&e, quarter_power);
            let (ea, eb) = (e.eval(&a), e.eval(&b));
            let (qa, qb) = (q.eval(&a), q.eval(&b));
            if ea < eb { prop_assert!(qa <= qb); }
            if ea > eb { prop_assert!(qa >= qb); }
        }
    }
}
