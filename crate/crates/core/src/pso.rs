//! Standard PSO 2006.
//!
//! Particles move asynchronously in index order. For each coordinate `d`:
//!
//! ```text
//! v_d <- w v_d + U(0,c) (p_d - x_d) + U(0,c) (l_d - x_d)
//! x_d <- x_d + v_d
//! ```
//!
//! where `p` is the particle's best position and `l` the best position among
//! its informants. Each particle informs itself and `K` random others; the
//! links are redrawn after any iteration that fails to improve the swarm's
//! best value. No confinement is applied.

use crate::eval::{BudgetExhausted, BudgetedEvaluator, Objective, RunRecord, Termination};
use crate::optimizer::{IterationCost, Optimizer};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsoConfig {
    pub swarm_size: usize,
    pub inertia: f64,
    pub accel: f64,
    pub informants: usize,
}

impl PsoConfig {
    /// `S = 10 + floor(2 sqrt n)`, `w = 1/(2 ln 2)`, `c = 1/2 + ln 2`, `K = 3`.
    pub fn for_dim(n: usize) -> Self {
        Self {
            swarm_size: 10 + (2.0 * (n as f64).sqrt()).floor() as usize,
            inertia: 1.0 / (2.0 * std::f64::consts::LN_2),
            accel: 0.5 + std::f64::consts::LN_2,
            informants: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsoSwarm {
    pub positions: Vec<Vec<f64>>,
    pub velocities: Vec<Vec<f64>>,
    pub pbest_pos: Vec<Vec<f64>>,
    pub pbest_val: Vec<f64>,
    /// `links[i][j]`: particle `i` informs particle `j`.
    pub links: Vec<Vec<bool>>,
    /// Set when the last iteration did not improve the swarm's best.
    pub stagnant: bool,
    pub iteration: u64,
}

impl PsoSwarm {
    pub fn init(
        config: &PsoConfig,
        ev: &mut BudgetedEvaluator<'_>,
        rng: &mut RngStream,
    ) -> Result<Self, BudgetExhausted> {
        let n = ev.dim();
        let s = config.swarm_size;
        let (lo, hi) = ev.objective().init_bounds();
        let mut positions = Vec::with_capacity(s);
        let mut velocities = Vec::with_capacity(s);
        let mut values = Vec::with_capacity(s);
        for _ in 0..s {
            let x = rng.uniform_vec(n, lo, hi);
            let v: Vec<f64> = x
                .iter()
                .map(|xi| (rng.uniform_in(lo, hi) - xi) / 2.0)
                .collect();
            values.push(ev.evaluate(&x)?);
            positions.push(x);
            velocities.push(v);
        }
        let mut swarm = Self {
            pbest_pos: positions.clone(),
            positions,
            velocities,
            pbest_val: values,
            links: Vec::new(),
            stagnant: false,
            iteration: 0,
        };
        swarm.redraw_links(config, rng);
        Ok(swarm)
    }

    pub fn redraw_links(&mut self, config: &PsoConfig, rng: &mut RngStream) {
        let s = self.positions.len();
        self.links = vec![vec![false; s]; s];
        for i in 0..s {
            self.links[i][i] = true;
            for _ in 0..config.informants {
                let j = rng.below(s);
                self.links[i][j] = true;
            }
        }
    }

    /// Index of the best personal best among the informants of `j`.
    pub fn best_informant(&self, j: usize) -> usize {
        let mut best = j;
        for i in 0..self.positions.len() {
            if self.links[i][j] && self.pbest_val[i] < self.pbest_val[best] {
                best = i;
            }
        }
        best
    }

    pub fn global_best(&self) -> (usize, f64) {
        let mut best = 0;
        for i in 1..self.pbest_val.len() {
            if self.pbest_val[i] < self.pbest_val[best] {
                best = i;
            }
        }
        (best, self.pbest_val[best])
    }

    /// Move particle `j` once (velocity and position, no evaluation).
    pub fn move_particle(&mut self, config: &PsoConfig, j: usize, rng: &mut RngStream) {
        let l = self.best_informant(j);
        let n = self.positions[j].len();
        for d in 0..n {
            let x = self.positions[j][d];
            let p = self.pbest_pos[j][d];
            let g = self.pbest_pos[l][d];
            let r1 = rng.uniform_in(0.0, config.accel);
            let r2 = rng.uniform_in(0.0, config.accel);
            let v = config.inertia * self.velocities[j][d] + r1 * (p - x) + r2 * (g - x);
            self.velocities[j][d] = v;
            self.positions[j][d] = x + v;
        }
    }

    /// One iteration over all particles.
    pub fn step(
        &mut self,
        config: &PsoConfig,
        ev: &mut BudgetedEvaluator<'_>,
        rng: &mut RngStream,
    ) -> Result<(), BudgetExhausted> {
        if self.stagnant {
            self.redraw_links(config, rng);
        }
        let (_, before) = self.global_best();
        for j in 0..self.positions.len() {
            self.move_particle(config, j, rng);
            let f = ev.evaluate(&self.positions[j])?;
            if f < self.pbest_val[j] {
                self.pbest_val[j] = f;
                self.pbest_pos[j].clone_from(&self.positions[j]);
            }
        }
        let (_, after) = self.global_best();
        self.stagnant = !(after < before);
        self.iteration += 1;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Spso2006;

impl Spso2006 {
    pub const DEFAULT: Spso2006 = Spso2006;
}

impl Optimizer for Spso2006 {
    fn name(&self) -> &'static str {
        "pso"
    }

    fn minimize(&self, ev: &mut BudgetedEvaluator<'_>, rng: &mut RngStream) -> Termination {
        let config = PsoConfig::for_dim(ev.dim());
        let Ok(mut swarm) = PsoSwarm::init(&config, ev, rng) else {
            return ev.stop_reason();
        };
        while !ev.should_stop() {
            if swarm.step(&config, ev, rng).is_err() {
                break;
            }
        }
        ev.stop_reason()
    }

    fn iteration_cost(&self, n: usize) -> IterationCost {
        let s = PsoConfig::for_dim(n).swarm_size as u64;
        IterationCost {
            init: s,
            per_iteration: s,
        }
    }

    fn describe(&self, n: usize) -> String {
        let c = PsoConfig::for_dim(n);
        format!(
            "pso: SPSO-2006 S={} w={:.6} c={:.6} K={}",
            c.swarm_size, c.inertia, c.accel, c.informants
        )
    }
}

/// One PSO start on `objective`.
pub fn run(objective: &dyn Objective, budget: u64, rng: &mut RngStream) -> RunRecord {
    crate::optimizer::run(&Spso2006, objective, budget, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functions::FunctionSpec;
    use crate::rng::derive_stream;

    #[test]
    fn default_constants() {
        let c = PsoConfig::for_dim(20);
        assert_eq!(c.swarm_size, 18);
        assert!((c.inertia - 0.7213475).abs() < 1e-6);
        assert!((c.accel - 1.1931472).abs() < 1e-6);
        assert_eq!(c.informants, 3);
    }

    fn swarm_of(x: Vec<f64>, v: Vec<f64>) -> PsoSwarm {
        PsoSwarm {
            positions: vec![x.clone(), x.clone()],
            velocities: vec![v.clone(), v],
            pbest_pos: vec![x.clone(), x],
            pbest_val: vec![1.0, 1.0],
            links: vec![vec![true; 2]; 2],
            stagnant: false,
            iteration: 0,
        }
    }

    #[test]
    fn fixed_point_stays_put() {
        let mut s = swarm_of(vec![1.0, 2.0], vec![0.0, 0.0]);
        s.move_particle(&PsoConfig::for_dim(2), 0, &mut derive_stream(0, 0));
        assert_eq!(s.positions[0], vec![1.0, 2.0]);
    }

    #[test]
    fn zero_acceleration_is_pure_inertia() {
        let c = PsoConfig {
            accel: 0.0,
            ..PsoConfig::for_dim(2)
        };
        let mut s = swarm_of(vec![1.0, 2.0], vec![0.5, -1.0]);
        s.pbest_pos[1] = vec![7.0, 7.0];
        s.pbest_val[1] = 0.0;
        s.move_particle(&c, 0, &mut derive_stream(0, 0));
        assert_eq!(s.positions[0], vec![1.0 + c.inertia * 0.5, 2.0 - c.inertia]);
    }

    #[test]
    fn init_is_reproducible_and_links_include_self() {
        let spec = FunctionSpec::sphere(4).unwrap();
        let c = PsoConfig::for_dim(4);
        let mk = || {
            let mut ev = BudgetedEvaluator::new(&spec, 100);
            PsoSwarm::init(&c, &mut ev, &mut derive_stream(2, 0)).unwrap()
        };
        let s = mk();
        assert_eq!(s, mk());
        assert!((0..c.swarm_size).all(|i| s.links[i][i]));
        for (x, v) in s.positions.iter().zip(&s.velocities) {
            for (xi, vi) in x.iter().zip(v) {
                let u = xi + 2.0 * vi;
                assert!((-20.0..=80.0).contains(&u));
            }
        }
    }

    #[test]
    fn personal_and_global_bests_never_increase() {
        let spec = FunctionSpec::sphere(5).unwrap();
        let c = PsoConfig::for_dim(5);
        let mut ev = BudgetedEvaluator::new(&spec, 100_000).ignore_target();
        let mut rng = derive_stream(3, 0);
        let mut s = PsoSwarm::init(&c, &mut ev, &mut rng).unwrap();
        let mut best = s.global_best().1;
        while !ev.should_stop() {
            let before = s.pbest_val.clone();
            if s.step(&c, &mut ev, &mut rng).is_err() {
                break;
            }
            assert!(s.pbest_val.iter().zip(&before).all(|(a, b)| a <= b));
            assert!(s.global_best().1 <= best);
            best = s.global_best().1;
        }
        assert!(best < 1e-9, "best {best}");
    }

    #[test]
    fn runs() {
        let spec = FunctionSpec::sphere(10).unwrap();
        let a = run(&spec, 1_000_000, &mut derive_stream(4, 0));
        assert!(a.success, "{a:?}");
        assert_eq!(a, run(&spec, 1_000_000, &mut derive_stream(4, 0)));
        let short = run(&spec, 5, &mut derive_stream(4, 0));
        assert!(!short.success);
    }
}
