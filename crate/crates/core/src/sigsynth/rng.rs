//! Seeded random streams for reproducible synthesis.
//!
//! Uniforms come from PCG32 (`rand_pcg::Pcg32`, XSH-RR output over a 64-bit
//! LCG). Gaussians use Box-Muller on pairs of uniforms, both outputs of a pair
//! consumed in order. Per-sample seeds are derived with the SplitMix64 finalizer
//! so any implementation can reproduce them without sharing generator state.

use rand::RngExt;
use rand_pcg::Pcg32;

/// Stream counter used for the jammer parameter draw.
pub const PARAM_STREAM: u64 = 0;
/// Stream counter used for the additive receiver noise.
pub const NOISE_STREAM: u64 = 1;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 output function applied to `x + gamma`.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a sequence of words into one seed by chained SplitMix64 mixing.
pub fn mix_seed(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0u64, |acc, &w| splitmix64(acc ^ splitmix64(w)))
}

/// Seed of one dataset cell entry: `mix(dataset_seed, class_code, jnr_index, trial_index)`.
pub fn sample_seed(dataset_seed: u64, class_code: u8, jnr_index: usize, trial_index: usize) -> u64 {
    mix_seed(&[
        dataset_seed,
        class_code as u64,
        jnr_index as u64,
        trial_index as u64,
    ])
}

/// Seed of sub-stream `counter` below a per-sample seed.
pub fn substream_seed(seed: u64, counter: u64) -> u64 {
    mix_seed(&[seed, counter])
}

/// Uniform + Gaussian source on top of PCG32.
#[derive(Debug, Clone)]
pub struct SimRng {
    pcg: Pcg32,
    spare: Option<f64>,
}

impl SimRng {
    pub fn new(seed: u64) -> Self {
        // stream selector is itself derived so that nearby seeds land on distinct LCG increments
        Self {
            pcg: Pcg32::new(seed, splitmix64(seed ^ 0x5851_f42d_4c95_7f2d)),
            spare: None,
        }
    }

    /// Generator for sub-stream `counter` of `seed`.
    pub fn substream(seed: u64, counter: u64) -> Self {
        Self::new(substream_seed(seed, counter))
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        self.pcg.random::<f64>()
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `lo..=hi`.
    pub fn int_in(&mut self, lo: u32, hi: u32) -> u32 {
        self.pcg.random_range(lo..=hi)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.pcg.random::<u64>()
    }

    /// Standard normal via Box-Muller.
    pub fn gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // 1 - u lies in (0, 1], keeping ln finite
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn pcg_mut(&mut self) -> &mut Pcg32 {
        &mut self.pcg
    }
}
