//! Seeded, stream-separated randomness.
//!
//! Every node gets its own stream and the channel gets another, so adding a
//! node to a scenario never perturbs the draws seen by existing nodes. A
//! `(seed, stream_id)` pair fully determines the value sequence.
//!
//! Each distribution consumes a fixed number of generator steps per draw
//! (uniform 1, bernoulli 1, gaussian 2), so draw counts stay stable across
//! code paths that toggle parameters like a zero noise amplitude.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RngError {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distribution {
    Uniform { lo: f64, hi: f64 },
    Gaussian { mean: f64, sigma: f64 },
    Bernoulli { p: f64 },
}

/// One independent random stream backed by a counter-mode generator.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        RngStream { seed, stream_id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform in [0, 1) with 53 random bits; one generator step.
    fn next_unit(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in (0, 1]; one generator step. Used where log(0) must not occur.
    fn next_unit_open(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi]; one generator step.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> Result<f64, RngError> {
        if lo > hi || !lo.is_finite() || !hi.is_finite() {
            return Err(RngError::InvalidDistribution(format!("uniform bounds {lo} > {hi}")));
        }
        Ok(lo + (hi - lo) * self.next_unit())
    }

    /// Gaussian via the Box-Muller cosine branch; always two generator steps.
    pub fn gaussian(&mut self, mean: f64, sigma: f64) -> Result<f64, RngError> {
        if sigma < 0.0 || !sigma.is_finite() || !mean.is_finite() {
            return Err(RngError::InvalidDistribution(format!("gaussian sigma {sigma}")));
        }
        let u1 = self.next_unit_open();
        let u2 = self.next_unit();
        let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        Ok(mean + sigma * z)
    }

    /// One generator step.
    pub fn bernoulli(&mut self, p: f64) -> Result<bool, RngError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(RngError::InvalidDistribution(format!("bernoulli p {p}")));
        }
        Ok(self.next_unit() < p)
    }

    /// Uniform index in [0, n); one generator step.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index over empty range");
        let i = (self.next_unit() * n as f64) as usize;
        i.min(n - 1)
    }

    /// Draws from a distribution descriptor; bernoulli maps to 0.0 / 1.0.
    pub fn draw(&mut self, dist: Distribution) -> Result<f64, RngError> {
        match dist {
            Distribution::Uniform { lo, hi } => self.uniform(lo, hi),
            Distribution::Gaussian { mean, sigma } => self.gaussian(mean, sigma),
            Distribution::Bernoulli { p } => self.bernoulli(p).map(|b| if b { 1.0 } else { 0.0 }),
        }
    }
}
