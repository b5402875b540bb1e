//! Sampling algorithms over a draft/target model pair: plain autoregressive
//! generation, exact draft-then-verify speculative decoding, and the
//! particle-population variant that replaces token-level rejection with
//! importance-weighted resampling.
//!
//! All randomness flows through named streams (see [`crate::rng`]): particle
//! `n` in round `r` draws only from `(seed, PARTICLE, r, n)`, resampling from
//! `(seed, RESAMPLE, r)`, final selection from `(seed, SELECT)`. Particle
//! work within a round is therefore order-independent and bitwise
//! reproducible; reweight/ESS/resample form the synchronization barrier.

mod sd;
mod smc;
mod trace;

pub use sd::{generate_ar, generate_sd, sd_round, SdRound};
pub use smc::{
    generate_power, generate_power_with, generate_powersmc, generate_powersmc_with, generate_smc,
    generate_smc_with, power_weight, powersmc_round, smc_round, RoundRecord, SmcResult, WeightRule,
};
pub use trace::format_round;

use rand_core::RngCore;

use crate::error::{Error, Result};
use crate::kvcache::PageTable;
use crate::lm::TokenString;
use crate::rng::{categorical_index, stream_rng, uniform_f64};

/// Stream tags; one namespace per consumer of randomness.
pub(crate) mod streams {
    pub const PARTICLE: u64 = 1;
    pub const RESAMPLE: u64 = 2;
    pub const SELECT: u64 = 3;
    pub const ESS_CHECK: u64 = 4;
    pub const SWEEP: u64 = 5;
}

/// One candidate string with its accumulated importance weight.
#[derive(Clone, Debug)]
pub struct Particle {
    pub tokens: TokenString,
    /// Log importance weight; `-inf` only for zero-probability degenerates,
    /// which then receive resampling probability exactly zero.
    pub log_weight: f64,
    /// Set once EOS has been emitted; terminal particles are never extended
    /// but keep their weights and participate in resampling.
    pub terminal: bool,
    /// Slot in an attached [`PageTable`], if cache accounting is on.
    pub cache_slot: Option<usize>,
}

/// A fixed-size population of particles plus the round counter and the root
/// seed from which all streams derive.
#[derive(Clone, Debug)]
pub struct Population {
    pub particles: Vec<Particle>,
    pub(crate) round: u64,
    pub(crate) seed: u64,
}

impl Population {
    pub fn new(n: usize, seed: u64) -> Result<Self> {
        Self::from_prefix(&TokenString::empty(), n, seed)
    }

    /// All particles start at a common prefix with equal weights `1/N`.
    pub fn from_prefix(prefix: &TokenString, n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("population needs n >= 1".into()));
        }
        let lw = -(n as f64).ln();
        Ok(Population {
            particles: (0..n)
                .map(|_| Particle {
                    tokens: prefix.clone(),
                    log_weight: lw,
                    terminal: false,
                    cache_slot: None,
                })
                .collect(),
            round: 0,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn log_weights(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.log_weight).collect()
    }

    pub fn all_terminal(&self) -> bool {
        self.particles.iter().all(|p| p.terminal)
    }

    /// Bind particle `n` to page-table slot `n`.
    pub fn attach_cache_slots(&mut self) {
        for (i, p) in self.particles.iter_mut().enumerate() {
            p.cache_slot = Some(i);
        }
    }

    /// The named stream particle `n` consumes during the current round.
    pub fn particle_rng(&self, n: usize) -> rand_chacha::ChaCha8Rng {
        stream_rng(self.seed, &[streams::PARTICLE, self.round, n as u64])
    }
}

/// Run-time knobs for a particle run.
#[derive(Clone, Copy, Debug)]
pub struct SmcConfig {
    /// Draft length K: tokens proposed per particle per round.
    pub draft_len: usize,
    /// Population size N.
    pub particles: usize,
    /// Resample when ESS drops strictly below this threshold in `[0, N]`.
    pub ess_threshold: f64,
    pub max_rounds: u64,
    pub seed: u64,
    /// Draw one token from the target after each scored draft block. The
    /// bonus token's weight contribution is exactly zero in log space.
    pub bonus_token: bool,
}

impl SmcConfig {
    /// Defaults: ESS threshold `N/2`, bonus token on.
    pub fn new(draft_len: usize, particles: usize, seed: u64) -> Self {
        SmcConfig {
            draft_len,
            particles,
            ess_threshold: particles as f64 / 2.0,
            max_rounds: 256,
            seed,
            bonus_token: true,
        }
    }

    pub fn with_ess_threshold(mut self, eta: f64) -> Self {
        self.ess_threshold = eta;
        self
    }

    pub fn with_max_rounds(mut self, rounds: u64) -> Self {
        self.max_rounds = rounds;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.draft_len == 0 {
            return Err(Error::InvalidParameter(
                "draft length k must be >= 1".into(),
            ));
        }
        if self.particles == 0 {
            return Err(Error::InvalidParameter(
                "particle count n must be >= 1".into(),
            ));
        }
        if !(self.ess_threshold >= 0.0 && self.ess_threshold <= self.particles as f64) {
            return Err(Error::InvalidParameter(format!(
                "ess threshold {} outside [0, {}]",
                self.ess_threshold, self.particles
            )));
        }
        if self.max_rounds == 0 {
            return Err(Error::InvalidParameter("max_rounds must be >= 1".into()));
        }
        Ok(())
    }
}

/// Effective sample size `(sum w)^2 / sum w^2` from log weights, computed
/// with a max shift. The result lands in `[1, N]`.
pub fn ess(log_weights: &[f64]) -> Result<f64> {
    let m = max_finite(log_weights)?;
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    for &lw in log_weights {
        let v = (lw - m).exp();
        s1 += v;
        s2 += v * v;
    }
    Ok((s1 * s1 / s2).clamp(1.0, log_weights.len() as f64))
}

/// Normalized probability weights from log weights; `-inf` maps to exactly
/// zero.
pub fn normalized_weights(log_weights: &[f64]) -> Result<Vec<f64>> {
    let m = max_finite(log_weights)?;
    let unnorm: Vec<f64> = log_weights.iter().map(|&lw| (lw - m).exp()).collect();
    let z: f64 = unnorm.iter().sum();
    Ok(unnorm.into_iter().map(|v| v / z).collect())
}

fn max_finite(log_weights: &[f64]) -> Result<f64> {
    let mut m = f64::NEG_INFINITY;
    for &lw in log_weights {
        if lw.is_nan() {
            return Err(Error::Internal("NaN log weight".into()));
        }
        if lw > m {
            m = lw;
        }
    }
    if log_weights.is_empty() || m == f64::NEG_INFINITY {
        return Err(Error::DegeneratePopulation);
    }
    Ok(m)
}

/// Multinomial resampling: draw N ancestors i.i.d. from the categorical over
/// normalized weights, replace particle strings by their ancestors', and
/// reset all weights to `1/N`. Cache handles are duplicated through the page
/// table's pointer operation; no KV content is copied. Returns the ancestor
/// vector.
pub fn resample_multinomial<R: RngCore>(
    pop: &mut Population,
    rng: &mut R,
    cache: Option<&mut PageTable>,
) -> Result<Vec<usize>> {
    let weights = normalized_weights(&pop.log_weights())?;
    let n = pop.len();
    let ancestors: Vec<usize> = (0..n)
        .map(|_| categorical_index(&weights, uniform_f64(rng)))
        .collect();
    let lw = -(n as f64).ln();
    pop.particles = ancestors
        .iter()
        .enumerate()
        .map(|(slot, &a)| Particle {
            tokens: pop.particles[a].tokens.clone(),
            log_weight: lw,
            terminal: pop.particles[a].terminal,
            cache_slot: pop.particles[slot].cache_slot,
        })
        .collect();
    if let Some(pt) = cache {
        pt.resample_pages(&ancestors)?;
    }
    Ok(ancestors)
}
