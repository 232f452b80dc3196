//! Reproducible Brownian increments with dyadic bridge refinement.
//!
//! Normal variate `k` at refinement level `l` is drawn from a ChaCha8
//! stream keyed by the seed, positioned at stream `l` and block offset `k`,
//! so any increment can be regenerated independently of the others.

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

// words reserved per variate; the ziggurat sampler needs two almost always
const WORDS_PER_DRAW: u128 = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    pub seed: u64,
    pub dt: f64,
    /// Number of bridge refinements applied to the base path.
    pub level: u32,
    pub increments: Vec<f64>,
}

impl BrownianPath {
    pub fn n_steps(&self) -> usize {
        self.increments.len()
    }

    /// Halves the step: each increment is split by the Brownian bridge so
    /// that consecutive pairs sum back to the coarse increment.
    pub fn refine(&self) -> BrownianPath {
        let level = self.level + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(level as u64);
        let spread = (self.dt / 4.0).sqrt();
        let mut increments = Vec::with_capacity(2 * self.increments.len());
        for (k, &dw) in self.increments.iter().enumerate() {
            let z = normal_at(&mut rng, k);
            let first = 0.5 * dw + spread * z;
            increments.push(first);
            increments.push(dw - first);
        }
        BrownianPath { seed: self.seed, dt: self.dt / 2.0, level, increments }
    }

    /// Sums consecutive blocks of `factor` increments.
    pub fn coarsen(&self, factor: usize) -> Result<BrownianPath> {
        if factor == 0 || self.increments.len() % factor != 0 {
            return Err(Error::config(format!(
                "cannot coarsen {} increments by {factor}",
                self.increments.len()
            )));
        }
        let increments = self.increments.chunks(factor).map(|c| c.iter().sum()).collect();
        Ok(BrownianPath { seed: self.seed, dt: self.dt * factor as f64, level: self.level, increments })
    }
}

fn normal_at(rng: &mut ChaCha8Rng, k: usize) -> f64 {
    rng.set_word_pos(k as u128 * WORDS_PER_DRAW);
    StandardNormal.sample(rng)
}

/// Base-level path of `n_steps` increments N(0, dt).
pub fn brownian_increments(seed: u64, n_steps: usize, dt: f64) -> Result<BrownianPath> {
    if n_steps == 0 {
        return Err(Error::config("a Brownian path needs at least one step"));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::config(format!("time step must be positive, got {dt}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = dt.sqrt();
    let increments = (0..n_steps).map(|k| scale * normal_at(&mut rng, k)).collect();
    Ok(BrownianPath { seed, dt, level: 0, increments })
}

/// Path on the grid dt_coarse / 2^levels obtained by bridge refinement, so
/// that paths at different resolutions share one Brownian motion.
pub fn refined_path(seed: u64, n_steps: usize, dt: f64, levels: u32) -> Result<BrownianPath> {
    let mut p = brownian_increments(seed, n_steps, dt)?;
    for _ in 0..levels {
        p = p.refine();
    }
    Ok(p)
}
