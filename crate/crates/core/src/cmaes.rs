//! CMA-ES with weighted recombination, cumulative step-size adaptation and
//! rank-one plus rank-mu covariance update.
//!
//! Samples are drawn as `m + sigma * C^(1/2) * F z`, where `C^(1/2)` is the
//! symmetric square root and `F` is a fixed orthogonal sampling frame (the
//! identity unless the run is conjugated). The symmetric root is unique, so
//! a conjugated run on `f(B x)` with `F = B^T` follows the unrotated run
//! exactly, even when `C` has repeated eigenvalues.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::eval::{BudgetExhausted, BudgetedEvaluator, Objective, RunRecord, Termination};
use crate::functions::OrthogonalMatrix;
use crate::optimizer::{IterationCost, Optimizer};
use crate::rng::RngStream;

/// Give up when the covariance condition number exceeds this.
const MAX_CONDITION: f64 = 1e14;

/// Strategy constants.
#[derive(Debug, Clone, PartialEq)]
pub struct CmaParams {
    pub n: usize,
    pub lambda: usize,
    pub mu: usize,
    pub weights: Vec<f64>,
    pub mu_eff: f64,
    pub c_sigma: f64,
    pub d_sigma: f64,
    pub c_c: f64,
    pub c_1: f64,
    pub c_mu: f64,
    pub sigma0: f64,
    /// Expected norm of an n-dimensional standard normal vector.
    pub chi_n: f64,
    /// Generations between eigendecompositions.
    pub eigen_interval: u64,
}

/// `4 + floor(3 ln n)`.
pub fn default_lambda(n: usize) -> usize {
    4 + (3.0 * (n as f64).ln()).floor() as usize
}

impl CmaParams {
    /// Defaults for dimension `n` and initialization interval `[lo, hi]`.
    pub fn new(n: usize, lo: f64, hi: f64) -> Self {
        let lambda = default_lambda(n);
        Self::with_population(n, lambda, lambda / 2, (hi - lo) / 3.0)
    }

    pub fn with_population(n: usize, lambda: usize, mu: usize, sigma0: f64) -> Self {
        assert!(n >= 1 && mu >= 1 && mu <= lambda);
        let raw: Vec<f64> = (1..=mu)
            .map(|i| (mu as f64 + 0.5).ln() - (i as f64).ln())
            .collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let nf = n as f64;

        let c_sigma = (mu_eff + 2.0) / (nf + mu_eff + 3.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = 4.0 / (nf + 4.0);
        let c_1 = 2.0 / ((nf + 1.3).powi(2) + mu_eff);
        let c_mu =
            (1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff));
        let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));
        let eigen_interval = if c_1 + c_mu > 0.0 {
            (1.0 / (10.0 * nf * (c_1 + c_mu))).ceil().max(1.0) as u64
        } else {
            1
        };

        Self {
            n,
            lambda,
            mu,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            sigma0,
            chi_n,
            eigen_interval,
        }
    }
}

/// Error returned by [`CmaState::ask`] once the covariance is unusable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("covariance matrix is degenerate")]
pub struct DegenerateCovariance;

/// Full mutable search state.
#[derive(Debug, Clone, PartialEq)]
pub struct CmaState {
    pub mean: DVector<f64>,
    pub sigma: f64,
    pub cov: DMatrix<f64>,
    pub p_sigma: DVector<f64>,
    pub p_c: DVector<f64>,
    pub eigen_basis: DMatrix<f64>,
    pub eigen_values: DVector<f64>,
    /// `C^(1/2) F`, applied to standard normal draws.
    sampler: DMatrix<f64>,
    /// `C^(-1/2)`.
    inv_sqrt: DMatrix<f64>,
    frame: Option<DMatrix<f64>>,
    pub generation: u64,
    degenerate: bool,
}

impl CmaState {
    /// Initial state: `C = I`, zero paths, `sigma = sigma0`.
    pub fn new(params: &CmaParams, mean: Vec<f64>, frame: Option<&OrthogonalMatrix>) -> Self {
        let n = params.n;
        assert_eq!(mean.len(), n);
        let frame = frame.map(|b| b.to_matrix().transpose());
        let sampler = frame.clone().unwrap_or_else(|| DMatrix::identity(n, n));
        Self {
            mean: DVector::from_vec(mean),
            sigma: params.sigma0,
            cov: DMatrix::identity(n, n),
            p_sigma: DVector::zeros(n),
            p_c: DVector::zeros(n),
            eigen_basis: DMatrix::identity(n, n),
            eigen_values: DVector::from_element(n, 1.0),
            sampler,
            inv_sqrt: DMatrix::identity(n, n),
            frame,
            generation: 0,
            degenerate: false,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Draw `lambda` candidates from consecutive Gaussian vectors.
    pub fn ask(
        &self,
        params: &CmaParams,
        rng: &mut RngStream,
    ) -> Result<Vec<Vec<f64>>, DegenerateCovariance> {
        if self.degenerate {
            return Err(DegenerateCovariance);
        }
        let n = params.n;
        Ok((0..params.lambda)
            .map(|_| {
                let z = DVector::from_fn(n, |_, _| rng.gaussian());
                let x = &self.mean + (&self.sampler * z) * self.sigma;
                x.iter().copied().collect()
            })
            .collect())
    }

    /// Update from `lambda` evaluated candidates. Non-finite fitness ranks last.
    pub fn tell(&mut self, params: &CmaParams, candidates: &[Vec<f64>], fitnesses: &[f64]) {
        assert_eq!(candidates.len(), params.lambda);
        assert_eq!(fitnesses.len(), params.lambda);
        let n = params.n;
        let key = |f: f64| if f.is_finite() { f } else { f64::INFINITY };
        let mut order: Vec<usize> = (0..params.lambda).collect();
        order.sort_by(|&a, &b| key(fitnesses[a]).total_cmp(&key(fitnesses[b])));

        let old_mean = self.mean.clone();
        let mut mean = DVector::zeros(n);
        for (w, &k) in params.weights.iter().zip(&order) {
            for (m, x) in mean.iter_mut().zip(&candidates[k]) {
                *m += w * x;
            }
        }
        let y_w = (&mean - &old_mean) / self.sigma;
        self.mean = mean;

        let cs = params.c_sigma;
        let z_w = &self.inv_sqrt * &y_w;
        self.p_sigma = &self.p_sigma * (1.0 - cs) + z_w * (cs * (2.0 - cs) * params.mu_eff).sqrt();
        let ps_norm = self.p_sigma.norm();
        let g = (self.generation + 1) as f64;
        let h_sigma = ps_norm / (1.0 - (1.0 - cs).powf(2.0 * g)).sqrt() / params.chi_n
            < 1.4 + 2.0 / (n as f64 + 1.0);
        let h = if h_sigma { 1.0 } else { 0.0 };

        let cc = params.c_c;
        self.p_c = &self.p_c * (1.0 - cc) + &y_w * (h * (cc * (2.0 - cc) * params.mu_eff).sqrt());

        let c1 = params.c_1;
        let cmu = params.c_mu;
        let mut cov = &self.cov * (1.0 - c1 - cmu + c1 * (1.0 - h) * cc * (2.0 - cc));
        cov += (&self.p_c * self.p_c.transpose()) * c1;
        for (w, &k) in params.weights.iter().zip(&order) {
            let y = (DVector::from_column_slice(&candidates[k]) - &old_mean) / self.sigma;
            cov += (&y * y.transpose()) * (cmu * w);
        }
        // Exact symmetry.
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (cov[(i, j)] + cov[(j, i)]);
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
        self.cov = cov;

        self.sigma *= ((cs / params.d_sigma) * (ps_norm / params.chi_n - 1.0)).exp();
        self.generation += 1;

        if self.generation.is_multiple_of(params.eigen_interval) {
            self.update_eigen();
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            self.degenerate = true;
        }
    }

    fn update_eigen(&mut self) {
        let eig = SymmetricEigen::new(self.cov.clone());
        let values = eig.eigenvalues;
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(min > 0.0 && max.is_finite()) || max / min > MAX_CONDITION {
            self.degenerate = true;
            return;
        }
        let basis = eig.eigenvectors;
        let sqrt_d = values.map(f64::sqrt);
        let scaled = &basis * DMatrix::from_diagonal(&sqrt_d);
        let sqrt_c = &scaled * basis.transpose();
        let inv_scaled = &basis * DMatrix::from_diagonal(&sqrt_d.map(|d| 1.0 / d));
        self.inv_sqrt = &inv_scaled * basis.transpose();
        self.sampler = match &self.frame {
            Some(f) => &sqrt_c * f,
            None => sqrt_c,
        };
        self.eigen_basis = basis;
        self.eigen_values = values;
    }

    /// True when a step of `0.1 sigma sqrt(C_ii)` no longer changes any
    /// coordinate of the mean.
    pub fn stagnated(&self) -> bool {
        (0..self.mean.len()).all(|i| {
            let m = self.mean[i];
            m + 0.1 * self.sigma * self.cov[(i, i)].sqrt() == m
        })
    }
}

/// CMA-ES with default parameters.
#[derive(Debug, Clone, Copy, Default)]
pub struct Cmaes;

impl Cmaes {
    pub const DEFAULT: Cmaes = Cmaes;

    fn drive(
        &self,
        ev: &mut BudgetedEvaluator<'_>,
        rng: &mut RngStream,
        frame: Option<&OrthogonalMatrix>,
    ) -> Termination {
        let n = ev.dim();
        let (lo, hi) = ev.objective().init_bounds();
        let params = CmaParams::new(n, lo, hi);
        let mut start = rng.uniform_vec(n, lo, hi);
        if let Some(b) = frame {
            start = b.apply_transpose(&start);
        }
        let mut state = CmaState::new(&params, start, frame);
        loop {
            if ev.should_stop() {
                return ev.stop_reason();
            }
            let Ok(candidates) = state.ask(&params, rng) else {
                return Termination::Degenerate;
            };
            let fitnesses: Result<Vec<f64>, BudgetExhausted> =
                candidates.iter().map(|x| ev.evaluate(x)).collect();
            let Ok(fitnesses) = fitnesses else {
                return ev.stop_reason();
            };
            state.tell(&params, &candidates, &fitnesses);
            if state.stagnated() {
                return Termination::Converged;
            }
        }
    }
}

impl Optimizer for Cmaes {
    fn name(&self) -> &'static str {
        "cmaes"
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
        IterationCost {
            init: 0,
            per_iteration: default_lambda(n) as u64,
        }
    }

    fn describe(&self, n: usize) -> String {
        let p = CmaParams::new(
            n,
            crate::functions::DEFAULT_INIT_LO,
            crate::functions::DEFAULT_INIT_HI,
        );
        format!(
            "cmaes: lambda={} mu={} mu_eff={:.4} sigma0={:.4} c_sigma={:.4} d_sigma={:.4} c_c={:.4} c_1={:.5} c_mu={:.5}",
            p.lambda, p.mu, p.mu_eff, p.sigma0, p.c_sigma, p.d_sigma, p.c_c, p.c_1, p.c_mu
        )
    }
}

/// One CMA-ES start on `objective`.
pub fn run(objective: &dyn Objective, budget: u64, rng: &mut RngStream) -> RunRecord {
    crate::optimizer::run(&Cmaes, objective, budget, rng)
}
