//! Seeded random streams.
//!
//! Every trial draws from its own [`RngStream`], derived from a master seed
//! and a lane index. The generator is ChaCha8, whose output is specified
//! bit-for-bit and therefore identical across platforms.
//!
//! Stream derivation: `seed = splitmix64(master ^ splitmix64(lane))`, then
//! `ChaCha8Rng::seed_from_u64(seed)`. `splitmix64` is a bijection, so distinct
//! lanes under one master seed always yield distinct stream seeds.
//!
//! Gaussian draws use the Marsaglia polar method. Each accepted pair yields
//! two deviates; the second is cached and returned by the next call.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The SplitMix64 output function (Steele, Lea & Flood).
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic random stream: uniform and Gaussian draws.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    inner: ChaCha8Rng,
    spare: Option<f64>,
}

impl RngStream {
    /// Stream seeded directly with `seed`.
    pub fn from_seed(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    /// The 64-bit seed this stream was created from.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n`. Panics if `n == 0`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    /// Standard normal draw (Marsaglia polar method).
    pub fn gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        loop {
            let u = 2.0 * self.uniform() - 1.0;
            let v = 2.0 * self.uniform() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let scale = (-2.0 * s.ln() / s).sqrt();
                self.spare = Some(v * scale);
                return u * scale;
            }
        }
    }

    /// A vector of `n` independent uniforms in `[lo, hi)`.
    pub fn uniform_vec(&mut self, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| self.uniform_in(lo, hi)).collect()
    }
}

/// Derive the stream for `lane` under `master_seed`.
pub fn derive_stream(master_seed: u64, lane: u64) -> RngStream {
    RngStream::from_seed(splitmix64(master_seed ^ splitmix64(lane)))
}
