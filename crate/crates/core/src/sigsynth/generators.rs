use num_complex::Complex64;
use std::f64::consts::TAU;

use super::params::{JammerParams, LfmParams, MtjParams, PbnjParams, PulseParams, SciParams, StjParams};
use super::rng::SimRng;
use super::{ComplexSignal, Result, SynthError};
use crate::dsp::{butterworth_lowpass, filter_apply};

pub fn mean_power(samples: &[Complex64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|c| c.norm_sqr()).sum::<f64>() / samples.len() as f64
}

fn check_in_band(f: f64, fs: f64, what: &str) -> Result<()> {
    if !(f.is_finite() && f.abs() < fs / 2.0) {
        return Err(SynthError::Parameter(format!(
            "{what} {f} Hz outside (-{0}, {0}) Hz",
            fs / 2.0
        )));
    }
    Ok(())
}

fn check_rate(fs: f64) -> Result<()> {
    if !(fs.is_finite() && fs > 0.0) {
        return Err(SynthError::Parameter(format!("sample rate {fs} must be positive")));
    }
    Ok(())
}

// every tone-like generator evaluates its phase as TAU * (f * t) + offset so the
// degenerate parameterizations coincide bit-for-bit with the single tone
#[inline]
fn tone_phase(freq_hz: f64, t: f64, offset: f64) -> f64 {
    TAU * (freq_hz * t) + offset
}

/// Unit-amplitude complex exponential `exp(j(2π f_c t + φ))`.
pub fn gen_stj(p: &StjParams, n: usize, fs: f64) -> Result<ComplexSignal> {
    check_rate(fs)?;
    check_in_band(p.carrier_hz, fs, "carrier")?;
    let samples = (0..n)
        .map(|i| Complex64::cis(tone_phase(p.carrier_hz, i as f64 / fs, p.phase_rad)))
        .collect();
    Ok(ComplexSignal::new(samples, fs))
}

/// Superposition of tones, each scaled by the square root of its power share.
pub fn gen_mtj(p: &MtjParams, n: usize, fs: f64) -> Result<ComplexSignal> {
    check_rate(fs)?;
    if p.tones.is_empty() {
        return Err(SynthError::Parameter("MTJ needs at least one tone".into()));
    }
    let total: f64 = p.tones.iter().map(|t| t.power).sum();
    if (total - 1.0).abs() > 1e-9 || p.tones.iter().any(|t| !(t.power >= 0.0)) {
        return Err(SynthError::Parameter(format!(
            "MTJ tone powers must be non-negative and sum to 1, got {total}"
        )));
    }
    let resolution = fs / n.max(1) as f64;
    for (i, a) in p.tones.iter().enumerate() {
        check_in_band(a.freq_hz, fs, "tone")?;
        for b in &p.tones[i + 1..] {
            if (a.freq_hz - b.freq_hz).abs() < resolution {
                return Err(SynthError::Parameter(format!(
                    "tones at {} and {} Hz are closer than the resolution {resolution} Hz",
                    a.freq_hz, b.freq_hz
                )));
            }
        }
    }
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            p.tones.iter().fold(Complex64::new(0.0, 0.0), |acc, tone| {
                acc + tone.power.sqrt() * Complex64::cis(tone_phase(tone.freq_hz, t, tone.phase_rad))
            })
        })
        .collect();
    Ok(ComplexSignal::new(samples, fs))
}

/// Linear up/down chirp `exp(j2π(f_0 t + k t²/2))`.
pub fn gen_lfm(p: &LfmParams, n: usize, fs: f64) -> Result<ComplexSignal> {
    check_rate(fs)?;
    let nyq = fs / 2.0;
    let t_end = n.saturating_sub(1) as f64 / fs;
    let stop = p.start_hz + p.sweep_bw_hz;
    let reached = p.start_hz + p.chirp_rate_hz_per_s * t_end;
    for (f, what) in [(p.start_hz, "start"), (stop, "sweep end"), (reached, "final frequency")] {
        if !(f.is_finite() && f > -nyq && f <= nyq) {
            return Err(SynthError::Parameter(format!(
                "LFM {what} {f} Hz leaves the Nyquist band"
            )));
        }
    }
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            Complex64::cis(TAU * (p.start_hz * t + 0.5 * p.chirp_rate_hz_per_s * t * t))
        })
        .collect();
    Ok(ComplexSignal::new(samples, fs))
}

/// Start index of each pulse repetition interval; the last entry is `n`.
fn pri_bounds(n: usize, count: usize) -> Vec<usize> {
    (0..=count).map(|j| j * n / count).collect()
}

/// Rectangular pulse train on a carrier. Interval `j` spans
/// `[j·n/count, (j+1)·n/count)`; the pulse covers its first `round(duty·len)` samples.
pub fn gen_pulse(p: &PulseParams, n: usize, fs: f64) -> Result<ComplexSignal> {
    check_rate(fs)?;
    check_in_band(p.carrier_hz, fs, "carrier")?;
    if p.pulse_count == 0 || p.pulse_count > n {
        return Err(SynthError::Parameter(format!(
            "pulse count {} invalid for {n} samples",
            p.pulse_count
        )));
    }
    if !(p.duty > 0.0 && p.duty <= 1.0) {
        return Err(SynthError::Parameter(format!("duty {} not in (0, 1]", p.duty)));
    }
    let bounds = pri_bounds(n, p.pulse_count);
    let mut samples = vec![Complex64::new(0.0, 0.0); n];
    for w in bounds.windows(2) {
        let len = w[1] - w[0];
        let width = (p.duty * len as f64).round() as usize;
        if width == 0 {
            return Err(SynthError::Parameter(format!(
                "duty {} leaves an empty pulse in a {len}-sample interval",
                p.duty
            )));
        }
        for (i, s) in samples.iter_mut().enumerate().skip(w[0]).take(width.min(len)) {
            *s = Complex64::cis(tone_phase(p.carrier_hz, i as f64 / fs, p.phase_rad));
        }
    }
    Ok(ComplexSignal::new(samples, fs))
}

/// Band-limited Gaussian noise: seeded complex WGN through a 4th-order
/// Butterworth low-pass at `B_J/2`, shifted to the center frequency and
/// normalized to unit mean power.
pub fn gen_pbnj(p: &PbnjParams, n: usize, fs: f64) -> Result<ComplexSignal> {
    check_rate(fs)?;
    let rel = p.noise_bw_hz / fs;
    if !(rel >= 0.10 - 1e-12 && rel <= 0.25 + 1e-12) {
        return Err(SynthError::Parameter(format!(
            "PBNJ bandwidth {} Hz outside [0.10, 0.25]·fs",
            p.noise_bw_hz
        )));
    }
    if !(p.center_hz.abs() + p.noise_bw_hz / 2.0 <= fs / 2.0) {
        return Err(SynthError::Parameter(format!(
            "PBNJ band centered at {} Hz leaves the Nyquist band",
            p.center_hz
        )));
    }
    let white = gen_noise(n, 1.0, p.noise_seed, fs)?;
    let lpf = butterworth_lowpass(4, p.noise_bw_hz / 2.0, fs)
        .map_err(|e| SynthError::Parameter(e.to_string()))?;
    let filtered = filter_apply(&lpf, &white);
    let shifted: Vec<Complex64> = filtered
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| s * Complex64::cis(tone_phase(p.center_hz, i as f64 / fs, 0.0)))
        .collect();
    let power = mean_power(&shifted);
    if !(power > 0.0) {
        return Err(SynthError::Calibration("filtered noise has zero power".into()));
    }
    let g = power.sqrt().recip();
    Ok(ComplexSignal::new(shifted.into_iter().map(|s| s * g).collect(), fs))
}

/// Sinusoidal FM `exp(j(2π f_c t + β sin(2π f_mod t)))`.
pub fn gen_sci(p: &SciParams, n: usize, fs: f64) -> Result<ComplexSignal> {
    check_rate(fs)?;
    let excursion = p.mod_index.abs() * p.mod_freq_hz.abs();
    if !(p.carrier_hz.abs() + excursion < fs / 2.0) {
        return Err(SynthError::Parameter(format!(
            "SCI instantaneous frequency {} ± {excursion} Hz leaves the Nyquist band",
            p.carrier_hz
        )));
    }
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            Complex64::cis(tone_phase(
                p.carrier_hz,
                t,
                p.mod_index * (TAU * p.mod_freq_hz * t).sin(),
            ))
        })
        .collect();
    Ok(ComplexSignal::new(samples, fs))
}

/// Circular complex white Gaussian noise, each component `N(0, variance/2)`.
pub fn gen_noise(n: usize, variance: f64, seed: u64, fs: f64) -> Result<ComplexSignal> {
    if !(variance > 0.0) {
        return Err(SynthError::Parameter(format!("noise variance {variance} must be positive")));
    }
    let sigma = (variance / 2.0).sqrt();
    let mut rng = SimRng::new(seed);
    let samples = (0..n)
        .map(|_| {
            let re = rng.gaussian();
            let im = rng.gaussian();
            Complex64::new(sigma * re, sigma * im)
        })
        .collect();
    Ok(ComplexSignal::new(samples, fs))
}

/// Waveform of `params` at unit (mean) power.
pub fn generate(params: &JammerParams, n: usize, fs: f64) -> Result<ComplexSignal> {
    match params {
        JammerParams::Stj(p) => gen_stj(p, n, fs),
        JammerParams::Mtj(p) => gen_mtj(p, n, fs),
        JammerParams::Lfm(p) => gen_lfm(p, n, fs),
        JammerParams::Pulse(p) => gen_pulse(p, n, fs),
        JammerParams::Pbnj(p) => gen_pbnj(p, n, fs),
        JammerParams::Sci(p) => gen_sci(p, n, fs),
        JammerParams::NoiseOnly => Err(SynthError::Parameter(
            "the noise-only class has no jamming waveform".into(),
        )),
    }
}

/// Rescales `jam` so that `10·log10(P_J / σ_n²) = jnr_db`, with `P_J` the mean
/// power over the whole window.
pub fn scale_to_jnr(jam: &ComplexSignal, jnr_db: f64, noise_variance: f64) -> Result<ComplexSignal> {
    let measured = jam.mean_power();
    if !(measured > 0.0 && measured.is_finite()) {
        return Err(SynthError::Calibration(format!(
            "jamming signal has mean power {measured}"
        )));
    }
    if !(noise_variance > 0.0 && jnr_db.is_finite()) {
        return Err(SynthError::Calibration(format!(
            "invalid target: jnr {jnr_db} dB over variance {noise_variance}"
        )));
    }
    let target = noise_variance * 10f64.powf(jnr_db / 10.0);
    let g = (target / measured).sqrt();
    Ok(ComplexSignal::new(
        jam.samples.iter().map(|s| s * g).collect(),
        jam.sample_rate_hz,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sigsynth::params::Tone;

    fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn stj_zero_frequency_is_ones() {
        let s = gen_stj(&StjParams { carrier_hz: 0.0, phase_rad: 0.0 }, 4, 8.0).unwrap();
        assert!(s.samples.iter().all(|&c| c == Complex64::new(1.0, 0.0)));
    }

    #[test]
    fn stj_quarter_rate_rotates() {
        let s = gen_stj(&StjParams { carrier_hz: 2.0, phase_rad: 0.0 }, 4, 8.0).unwrap();
        let want = [
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 1.0),
            Complex64::new(-1.0, 0.0),
            Complex64::new(0.0, -1.0),
        ];
        for (a, b) in s.samples.iter().zip(want) {
            assert!(close(*a, b, 1e-12));
        }
    }

    #[test]
    fn stj_has_unit_power_and_rejects_out_of_band() {
        let s = gen_stj(&StjParams { carrier_hz: 3.3e6, phase_rad: 1.1 }, 20_000, 2e7).unwrap();
        assert!((s.mean_power() - 1.0).abs() < 1e-12);
        assert!(gen_stj(&StjParams { carrier_hz: 1e7, phase_rad: 0.0 }, 10, 2e7).is_err());
    }

    #[test]
    fn mtj_rejects_unresolvable_tones() {
        let tones = vec![
            Tone { freq_hz: 1000.0, phase_rad: 0.0, power: 0.5 },
            Tone { freq_hz: 1500.0, phase_rad: 0.0, power: 0.5 },
        ];
        // resolution fs/n = 1 kHz
        assert!(gen_mtj(&MtjParams { tones }, 2000, 2e6).is_err());
    }

    #[test]
    fn lfm_final_phase_is_closed_form() {
        let fs = 2.0e6;
        let n = 2000;
        let p = LfmParams { start_hz: -5.0e5, chirp_rate_hz_per_s: 1.0e9, sweep_bw_hz: 1.0e6 };
        let s = gen_lfm(&p, n, fs).unwrap();
        let t = (n - 1) as f64 / fs;
        let phase = TAU * (p.start_hz * t + 0.5 * p.chirp_rate_hz_per_s * t * t);
        assert!(close(*s.samples.last().unwrap(), Complex64::cis(phase.rem_euclid(TAU)), 1e-9));
    }

    #[test]
    fn lfm_rejects_sweep_beyond_nyquist() {
        let p = LfmParams { start_hz: 2.0e5, chirp_rate_hz_per_s: 1.0e9, sweep_bw_hz: 1.0e6 };
        assert!(gen_lfm(&p, 2000, 2e6).is_err());
    }

    #[test]
    fn pulse_counts_and_power() {
        let p = PulseParams { carrier_hz: 1.0e6, phase_rad: 0.3, pulse_count: 6, duty: 0.3 };
        let s = gen_pulse(&p, 20_000, 2e7).unwrap();
        let on = s.samples.iter().filter(|c| c.norm_sqr() > 0.0).count();
        assert_eq!(on, 6 * (0.3f64 * 20_000.0 / 6.0).round() as usize);
        assert_eq!(on, 6000);
        assert!((s.mean_power() - 0.3).abs() <= 6.0 / 20_000.0);
    }

    #[test]
    fn pulse_rejects_empty_pulses() {
        let p = PulseParams { carrier_hz: 0.0, phase_rad: 0.0, pulse_count: 6, duty: 1e-4 };
        assert!(gen_pulse(&p, 600, 1e3).is_err());
        let p = PulseParams { duty: 0.0, ..p };
        assert!(gen_pulse(&p, 600, 1e3).is_err());
    }

    #[test]
    fn pbnj_is_unit_power_and_validates() {
        let p = PbnjParams { noise_bw_hz: 3.0e6, center_hz: 2.0e6, noise_seed: 9 };
        let s = gen_pbnj(&p, 20_000, 2e7).unwrap();
        assert!((s.mean_power() - 1.0).abs() < 1e-9);
        assert!(gen_pbnj(&PbnjParams { noise_bw_hz: 1.0e6, ..p }, 100, 2e7).is_err());
        assert!(gen_pbnj(&PbnjParams { center_hz: 8.9e6, ..p }, 100, 2e7).is_err());
    }

    #[test]
    fn sci_rejects_wide_excursion() {
        let p = SciParams { carrier_hz: 0.0, mod_freq_hz: 1.0e5, mod_index: 50.0 };
        assert!(gen_sci(&p, 100, 2e6).is_err());
        assert!(gen_sci(&p, 100, 2e7).is_ok());
    }

    #[test]
    fn noise_is_deterministic_and_rejects_bad_variance() {
        let a = gen_noise(1000, 2.0, 77, 1.0).unwrap();
        let b = gen_noise(1000, 2.0, 77, 1.0).unwrap();
        assert_eq!(a, b);
        assert!(gen_noise(10, 0.0, 1, 1.0).is_err());
    }

    #[test]
    fn scaling_examples() {
        let unit = gen_stj(&StjParams { carrier_hz: 1e3, phase_rad: 0.0 }, 1000, 1e5).unwrap();
        let same = scale_to_jnr(&unit, 0.0, 1.0).unwrap();
        for (a, b) in same.samples.iter().zip(&unit.samples) {
            assert!(close(*a, *b, 1e-15));
        }
        let low = scale_to_jnr(&unit, -20.0, 1.0).unwrap();
        assert!((low.mean_power() - 0.01).abs() < 1e-12);
        let zero = ComplexSignal::new(vec![Complex64::new(0.0, 0.0); 10], 1.0);
        assert!(matches!(scale_to_jnr(&zero, 0.0, 1.0), Err(SynthError::Calibration(_))));
    }
}
