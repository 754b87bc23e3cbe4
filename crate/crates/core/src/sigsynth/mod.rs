//! Jamming signal synthesis.
//!
//! Six interference primitives plus a noise-only class, each drawn with
//! randomized physical parameters, calibrated to a target jamming-to-noise
//! ratio and added to circular complex white Gaussian noise. Every sample is a
//! pure function of its [`SampleSpec`] and the [`SimConfig`].

mod generators;
mod params;
pub mod rng;

pub use generators::{
    gen_lfm, gen_mtj, gen_noise, gen_pbnj, gen_pulse, gen_sci, gen_stj, generate, mean_power,
    scale_to_jnr,
};
pub use params::{draw_params, JammerParams, LfmParams, MtjParams, PbnjParams, PulseParams, SciParams, StjParams, Tone};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

use rng::{SimRng, NOISE_STREAM, PARAM_STREAM};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid jammer parameter: {0}")]
    Parameter(String),
    #[error("cannot calibrate JNR: {0}")]
    Calibration(String),
    #[error("invalid simulation config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, SynthError>;

/// Sampled complex-baseband IQ sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSignal {
    pub samples: Vec<Complex64>,
    pub sample_rate_hz: f64,
}

impl ComplexSignal {
    pub fn new(samples: Vec<Complex64>, sample_rate_hz: f64) -> Self {
        Self {
            samples,
            sample_rate_hz,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean_power(&self) -> f64 {
        mean_power(&self.samples)
    }

    pub fn is_finite(&self) -> bool {
        self.samples.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }
}

/// The seven signal classes. The integer code is the training label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum JammerClass {
    Stj,
    Mtj,
    Lfm,
    Pulse,
    Pbnj,
    Sci,
    None,
}

impl JammerClass {
    pub const COUNT: usize = 7;
    pub const ALL: [JammerClass; 7] = [
        JammerClass::Stj,
        JammerClass::Mtj,
        JammerClass::Lfm,
        JammerClass::Pulse,
        JammerClass::Pbnj,
        JammerClass::Sci,
        JammerClass::None,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            JammerClass::Stj => "STJ",
            JammerClass::Mtj => "MTJ",
            JammerClass::Lfm => "LFM",
            JammerClass::Pulse => "Pulse",
            JammerClass::Pbnj => "PBNJ",
            JammerClass::Sci => "SCI",
            JammerClass::None => "None",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.name().eq_ignore_ascii_case(name))
    }
}

impl fmt::Display for JammerClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One sample to synthesize.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleSpec {
    pub class: JammerClass,
    pub jnr_db: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub sample_rate_hz: f64,
    pub duration_s: f64,
    pub jnr_grid_db: Vec<f64>,
    pub trials_per_cell: usize,
    /// Complex noise variance; each of I and Q carries half.
    pub noise_variance: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 2.0e7,
            duration_s: 1.0e-3,
            jnr_grid_db: vec![-25.0, -20.0, -15.0, -10.0, -5.0, 0.0, 5.0, 10.0],
            trials_per_cell: 1000,
            noise_variance: 1.0,
        }
    }
}

impl SimConfig {
    /// Small profile used by tests and the quick training run: 2 MHz, 1 ms,
    /// JNR {0, 5, 10} dB, 60 trials per cell.
    pub fn desk() -> Self {
        Self {
            sample_rate_hz: 2.0e6,
            duration_s: 1.0e-3,
            jnr_grid_db: vec![0.0, 5.0, 10.0],
            trials_per_cell: 60,
            noise_variance: 1.0,
        }
    }

    pub fn num_samples(&self) -> usize {
        (self.sample_rate_hz * self.duration_s).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz > 0.0 && self.duration_s > 0.0) {
            return Err(SynthError::Config(
                "sample rate and duration must be positive".into(),
            ));
        }
        let n = self.sample_rate_hz * self.duration_s;
        if (n - n.round()).abs() > 1e-6 * n.max(1.0) || n.round() < 1.0 {
            return Err(SynthError::Config(format!(
                "sample_rate_hz * duration_s = {n} is not a positive integer"
            )));
        }
        if self.jnr_grid_db.is_empty() || self.jnr_grid_db.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SynthError::Config(
                "JNR grid must be non-empty and strictly increasing".into(),
            ));
        }
        if !(self.noise_variance > 0.0) {
            return Err(SynthError::Config("noise variance must be positive".into()));
        }
        Ok(())
    }
}

/// Jamming and noise parts of a synthesized sample, kept apart for inspection.
#[derive(Debug, Clone)]
pub struct SampleComponents {
    pub params: JammerParams,
    /// Calibrated jamming component; `None` for the noise-only class.
    pub jamming: Option<ComplexSignal>,
    pub noise: ComplexSignal,
}

impl SampleComponents {
    pub fn received(&self) -> ComplexSignal {
        match &self.jamming {
            Some(j) => ComplexSignal::new(
                j.samples
                    .iter()
                    .zip(&self.noise.samples)
                    .map(|(a, b)| a + b)
                    .collect(),
                self.noise.sample_rate_hz,
            ),
            None => self.noise.clone(),
        }
    }
}

/// Synthesizes the received signal `y[n] = J[n] + eta[n]` and returns both parts.
pub fn synth_components(spec: &SampleSpec, cfg: &SimConfig) -> Result<SampleComponents> {
    cfg.validate()?;
    let n = cfg.num_samples();
    let fs = cfg.sample_rate_hz;
    let noise = gen_noise(
        n,
        cfg.noise_variance,
        rng::substream_seed(spec.seed, NOISE_STREAM),
        fs,
    )?;
    let mut param_rng = SimRng::substream(spec.seed, PARAM_STREAM);
    let params = draw_params(spec.class, fs, cfg.duration_s, &mut param_rng);
    let jamming = match spec.class {
        JammerClass::None => None,
        _ => {
            let raw = generate(&params, n, fs)?;
            Some(scale_to_jnr(&raw, spec.jnr_db, cfg.noise_variance)?)
        }
    };
    Ok(SampleComponents {
        params,
        jamming,
        noise,
    })
}

pub fn synth_sample(spec: &SampleSpec, cfg: &SimConfig) -> Result<ComplexSignal> {
    Ok(synth_components(spec, cfg)?.received())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_codes_are_stable() {
        for (i, c) in JammerClass::ALL.iter().enumerate() {
            assert_eq!(c.code() as usize, i);
            assert_eq!(JammerClass::from_code(i as u8), Some(*c));
            assert_eq!(JammerClass::from_name(c.name()), Some(*c));
        }
        assert_eq!(JammerClass::from_code(7), None);
    }

    #[test]
    fn default_config_matches_dataset_protocol() {
        let cfg = SimConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.num_samples(), 20_000);
        assert_eq!(cfg.jnr_grid_db.len(), 8);
    }

    #[test]
    fn rejects_bad_grid() {
        let cfg = SimConfig {
            jnr_grid_db: vec![0.0, 0.0],
            ..SimConfig::desk()
        };
        assert!(cfg.validate().is_err());
        let cfg = SimConfig {
            duration_s: 1.0e-3 + 1.3e-7,
            ..SimConfig::desk()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn noise_only_is_pure_noise() {
        let cfg = SimConfig::desk();
        let spec = SampleSpec {
            class: JammerClass::None,
            jnr_db: 5.0,
            seed: 99,
        };
        let y = synth_sample(&spec, &cfg).unwrap();
        let eta = gen_noise(
            cfg.num_samples(),
            1.0,
            rng::substream_seed(99, NOISE_STREAM),
            cfg.sample_rate_hz,
        )
        .unwrap();
        assert_eq!(y, eta);
    }

    #[test]
    fn sample_is_deterministic_for_every_class() {
        let cfg = SimConfig::desk();
        for class in JammerClass::ALL {
            let spec = SampleSpec {
                class,
                jnr_db: 0.0,
                seed: 1234,
            };
            let a = synth_sample(&spec, &cfg).unwrap();
            let b = synth_sample(&spec, &cfg).unwrap();
            assert_eq!(a.len(), 2000);
            assert!(a.is_finite());
            assert!(a
                .samples
                .iter()
                .zip(&b.samples)
                .all(|(x, y)| x.re.to_bits() == y.re.to_bits() && x.im.to_bits() == y.im.to_bits()));
        }
    }

    #[test]
    fn stj_component_is_calibrated() {
        let cfg = SimConfig::desk();
        let spec = SampleSpec {
            class: JammerClass::Stj,
            jnr_db: 10.0,
            seed: 5,
        };
        let parts = synth_components(&spec, &cfg).unwrap();
        let y = parts.received();
        let residual: Vec<Complex64> = y
            .samples
            .iter()
            .zip(&parts.noise.samples)
            .map(|(a, b)| a - b)
            .collect();
        let jnr = 10.0 * (mean_power(&residual) / cfg.noise_variance).log10();
        assert!((jnr - 10.0).abs() < 1e-6, "{jnr}");
    }
}
