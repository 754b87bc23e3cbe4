use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::rng::SimRng;
use super::JammerClass;

/// Fraction of the receiver band (-fs/2, fs/2) that narrow-band carriers are drawn from.
const CARRIER_SPAN: f64 = 0.95;
const MAX_REDRAWS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StjParams {
    pub carrier_hz: f64,
    pub phase_rad: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tone {
    pub freq_hz: f64,
    pub phase_rad: f64,
    /// Fraction of the total jamming power carried by this tone.
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtjParams {
    pub tones: Vec<Tone>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LfmParams {
    pub start_hz: f64,
    /// Sweep slope `B_sweep / T_sweep` in Hz/s.
    pub chirp_rate_hz_per_s: f64,
    pub sweep_bw_hz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseParams {
    pub carrier_hz: f64,
    pub phase_rad: f64,
    pub pulse_count: usize,
    /// Pulse width over pulse repetition interval.
    pub duty: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PbnjParams {
    pub noise_bw_hz: f64,
    pub center_hz: f64,
    pub noise_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SciParams {
    pub carrier_hz: f64,
    pub mod_freq_hz: f64,
    pub mod_index: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class")]
pub enum JammerParams {
    Stj(StjParams),
    Mtj(MtjParams),
    Lfm(LfmParams),
    Pulse(PulseParams),
    Pbnj(PbnjParams),
    Sci(SciParams),
    /// Noise-only class: no jamming component.
    NoiseOnly,
}

impl JammerParams {
    pub fn class(&self) -> JammerClass {
        match self {
            JammerParams::Stj(_) => JammerClass::Stj,
            JammerParams::Mtj(_) => JammerClass::Mtj,
            JammerParams::Lfm(_) => JammerClass::Lfm,
            JammerParams::Pulse(_) => JammerClass::Pulse,
            JammerParams::Pbnj(_) => JammerClass::Pbnj,
            JammerParams::Sci(_) => JammerClass::Sci,
            JammerParams::NoiseOnly => JammerClass::None,
        }
    }
}

fn carrier(rng: &mut SimRng, fs: f64) -> f64 {
    let edge = CARRIER_SPAN * fs / 2.0;
    rng.uniform_in(-edge, edge)
}

fn phase(rng: &mut SimRng) -> f64 {
    rng.uniform_in(0.0, 2.0 * PI)
}

/// Draws randomized jammer parameters for `class` at sample rate `fs` over a
/// window of `duration_s` seconds.
///
/// Ranges: carriers uniform over 95% of the band; MTJ with 3 to 5 tones of
/// equal power; LFM sweeping fs/2 once per window from a start that keeps the
/// up-chirp in band; pulse trains of 6 pulses at 30% duty; PBNJ bandwidth
/// 10%..25% of fs with the center placed so the band stays inside Nyquist; SCI
/// with `f_mod` in 10..100 kHz and index 10..50, redrawn until the frequency
/// excursion fits inside 95% of the band.
pub fn draw_params(class: JammerClass, fs: f64, duration_s: f64, rng: &mut SimRng) -> JammerParams {
    let n = (fs * duration_s).round().max(1.0);
    match class {
        JammerClass::Stj => JammerParams::Stj(StjParams {
            carrier_hz: carrier(rng, fs),
            phase_rad: phase(rng),
        }),
        JammerClass::Mtj => {
            let k = rng.int_in(3, 5) as usize;
            let min_sep = fs / n;
            let mut freqs: Vec<f64> = Vec::with_capacity(k);
            let mut redraws = 0;
            while freqs.len() < k {
                let f = carrier(rng, fs);
                if redraws < MAX_REDRAWS && freqs.iter().any(|g| (g - f).abs() < min_sep) {
                    redraws += 1;
                    continue;
                }
                freqs.push(f);
            }
            let tones = freqs
                .into_iter()
                .map(|freq_hz| Tone {
                    freq_hz,
                    phase_rad: phase(rng),
                    power: 1.0 / k as f64,
                })
                .collect();
            JammerParams::Mtj(MtjParams { tones })
        }
        JammerClass::Lfm => {
            let sweep = fs / 2.0;
            // keep start strictly above -fs/2
            let mut start = rng.uniform_in(-fs / 2.0, fs / 2.0 - sweep);
            while start <= -fs / 2.0 {
                start = rng.uniform_in(-fs / 2.0, fs / 2.0 - sweep);
            }
            JammerParams::Lfm(LfmParams {
                start_hz: start,
                chirp_rate_hz_per_s: sweep / duration_s,
                sweep_bw_hz: sweep,
            })
        }
        JammerClass::Pulse => JammerParams::Pulse(PulseParams {
            carrier_hz: carrier(rng, fs),
            phase_rad: phase(rng),
            pulse_count: 6,
            duty: 0.3,
        }),
        JammerClass::Pbnj => {
            let bw = rng.uniform_in(0.10, 0.25) * fs;
            let edge = fs / 2.0 - bw / 2.0;
            JammerParams::Pbnj(PbnjParams {
                noise_bw_hz: bw,
                center_hz: rng.uniform_in(-edge, edge),
                noise_seed: rng.next_u64(),
            })
        }
        JammerClass::Sci => {
            let limit = CARRIER_SPAN * fs / 2.0;
            let mut draw = (rng.uniform_in(10.0, 50.0), rng.uniform_in(10.0e3, 100.0e3));
            let mut redraws = 0;
            while draw.0 * draw.1 >= limit && redraws < MAX_REDRAWS {
                draw = (rng.uniform_in(10.0, 50.0), rng.uniform_in(10.0e3, 100.0e3));
                redraws += 1;
            }
            if draw.0 * draw.1 >= limit {
                // smallest excursion the ranges allow; gen_sci rejects it if still out of band
                draw = (10.0, 10.0e3);
            }
            let (beta, f_mod) = draw;
            let room = (limit - beta * f_mod).max(0.0);
            JammerParams::Sci(SciParams {
                carrier_hz: rng.uniform_in(-room, room),
                mod_freq_hz: f_mod,
                mod_index: beta,
            })
        }
        JammerClass::None => JammerParams::NoiseOnly,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stj_carrier_inside_95_percent_band() {
        let fs = 2.0e7;
        let mut rng = SimRng::new(3);
        for _ in 0..5000 {
            let JammerParams::Stj(p) = draw_params(JammerClass::Stj, fs, 1e-3, &mut rng) else {
                unreachable!()
            };
            assert!(p.carrier_hz.abs() <= 0.475 * fs);
            assert!((0.0..2.0 * PI).contains(&p.phase_rad));
        }
    }

    #[test]
    fn lfm_sweeps_half_the_sample_rate() {
        let fs = 2.0e7;
        let mut rng = SimRng::new(4);
        for _ in 0..1000 {
            let JammerParams::Lfm(p) = draw_params(JammerClass::Lfm, fs, 1e-3, &mut rng) else {
                unreachable!()
            };
            assert_eq!(p.sweep_bw_hz, 1.0e7);
            assert!(p.start_hz > -fs / 2.0 && p.start_hz + p.sweep_bw_hz <= fs / 2.0);
            assert!((p.chirp_rate_hz_per_s - 1.0e10).abs() < 1e-3);
        }
    }

    #[test]
    fn pbnj_band_fits() {
        let fs = 2.0e7;
        let mut rng = SimRng::new(5);
        for _ in 0..2000 {
            let JammerParams::Pbnj(p) = draw_params(JammerClass::Pbnj, fs, 1e-3, &mut rng) else {
                unreachable!()
            };
            assert!(p.noise_bw_hz >= 0.10 * fs && p.noise_bw_hz <= 0.25 * fs);
            assert!(p.center_hz.abs() + p.noise_bw_hz / 2.0 <= fs / 2.0);
        }
    }

    #[test]
    fn sci_excursion_fits_at_both_profiles() {
        for fs in [2.0e7, 2.0e6] {
            let mut rng = SimRng::new(6);
            for _ in 0..2000 {
                let JammerParams::Sci(p) = draw_params(JammerClass::Sci, fs, 1e-3, &mut rng) else {
                    unreachable!()
                };
                assert!((10.0..=50.0).contains(&p.mod_index));
                assert!((10.0e3..=100.0e3).contains(&p.mod_freq_hz));
                assert!(p.carrier_hz.abs() + p.mod_index * p.mod_freq_hz < 0.475 * fs + 1e-6);
            }
        }
    }

    #[test]
    fn mtj_tones_are_separated_and_equal_power() {
        let fs = 2.0e7;
        let mut rng = SimRng::new(7);
        for _ in 0..1000 {
            let JammerParams::Mtj(p) = draw_params(JammerClass::Mtj, fs, 1e-3, &mut rng) else {
                unreachable!()
            };
            let k = p.tones.len();
            assert!((3..=5).contains(&k));
            let total: f64 = p.tones.iter().map(|t| t.power).sum();
            assert!((total - 1.0).abs() < 1e-12);
            for (i, a) in p.tones.iter().enumerate() {
                for b in &p.tones[i + 1..] {
                    assert!((a.freq_hz - b.freq_hz).abs() >= fs / 20_000.0);
                }
            }
        }
    }

    #[test]
    fn identical_rng_state_gives_identical_draws() {
        for class in JammerClass::ALL {
            let mut a = SimRng::new(11);
            let mut b = SimRng::new(11);
            assert_eq!(
                draw_params(class, 2.0e7, 1e-3, &mut a),
                draw_params(class, 2.0e7, 1e-3, &mut b)
            );
        }
    }
}
