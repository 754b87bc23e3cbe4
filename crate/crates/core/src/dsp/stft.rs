use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::fft::FftPlan;
use super::{DspError, Result};
use crate::sigsynth::ComplexSignal;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StftConfig {
    pub window_len: usize,
    pub hop: usize,
    pub nfft: usize,
    pub eps: f64,
    pub gamma: f64,
    pub out_height: usize,
    pub out_width: usize,
}

impl Default for StftConfig {
    /// Hann 128, hop 10 (≈92% overlap), 4096-point FFT, 224×224 output.
    fn default() -> Self {
        Self {
            window_len: 128,
            hop: 10,
            nfft: 4096,
            eps: 1e-10,
            gamma: 0.9,
            out_height: 224,
            out_width: 224,
        }
    }
}

impl StftConfig {
    /// Companion of [`crate::sigsynth::SimConfig::desk`]: window 64, hop 8, 256-point FFT, 64×64 images.
    pub fn desk() -> Self {
        Self {
            window_len: 64,
            hop: 8,
            nfft: 256,
            eps: 1e-10,
            gamma: 0.9,
            out_height: 64,
            out_width: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 {
            return Err(DspError::Parameter("hop must be at least 1".into()));
        }
        if self.window_len < 2 {
            return Err(DspError::Parameter("window must have at least 2 samples".into()));
        }
        if self.nfft < self.window_len || !self.nfft.is_power_of_two() {
            return Err(DspError::Parameter(format!(
                "nfft {} must be a power of two not smaller than the window {}",
                self.nfft, self.window_len
            )));
        }
        if !(self.gamma > 0.0 && self.gamma <= 2.0) {
            return Err(DspError::Parameter(format!("gamma {} not in (0, 2]", self.gamma)));
        }
        if !(self.eps > 0.0) {
            return Err(DspError::Parameter("eps must be positive".into()));
        }
        if self.out_height == 0 || self.out_width == 0 {
            return Err(DspError::Parameter("output image must be non-empty".into()));
        }
        Ok(())
    }

    pub fn frame_count(&self, n: usize) -> Option<usize> {
        if n < self.window_len || self.hop == 0 {
            None
        } else {
            Some((n - self.window_len) / self.hop + 1)
        }
    }
}

/// Symmetric Hann window `0.5·(1 − cos(2πn/(L−1)))`.
pub fn hann_window(len: usize) -> Vec<f64> {
    if len < 2 {
        return vec![1.0; len];
    }
    let denom = (len - 1) as f64;
    (0..len)
        .map(|n| 0.5 * (1.0 - (2.0 * PI * n as f64 / denom).cos()))
        .collect()
}

/// Complex STFT with frequency rows centered so row 0 is −fs/2.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    /// Row-major `(nfft, frames)`.
    pub bins: Vec<Complex64>,
    pub nfft: usize,
    pub frames: usize,
}

impl Spectrogram {
    pub fn at(&self, row: usize, frame: usize) -> Complex64 {
        self.bins[row * self.frames + frame]
    }

    /// Centered row that holds frequency `freq_hz` (nearest bin).
    pub fn row_of(&self, freq_hz: f64, fs: f64) -> usize {
        let bin = (freq_hz / fs * self.nfft as f64).round() as i64;
        (bin + (self.nfft / 2) as i64).rem_euclid(self.nfft as i64) as usize
    }
}

/// Dense real matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RealMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl RealMatrix {
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

/// Frame `m` covers samples `[m·hop, m·hop + window_len)`; each frame is
/// Hann-weighted, zero-padded to `nfft` and transformed.
pub fn stft(sig: &ComplexSignal, cfg: &StftConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    let frames = cfg.frame_count(sig.len()).ok_or_else(|| {
        DspError::Size(format!(
            "signal of {} samples is shorter than the {}-sample window",
            sig.len(),
            cfg.window_len
        ))
    })?;
    let nfft = cfg.nfft;
    let half = nfft / 2;
    let window = hann_window(cfg.window_len);
    let plan = FftPlan::new(nfft)?;
    let mut bins = vec![Complex64::new(0.0, 0.0); nfft * frames];
    let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
    for m in 0..frames {
        let start = m * cfg.hop;
        buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        for (dst, (x, w)) in buf
            .iter_mut()
            .zip(sig.samples[start..start + cfg.window_len].iter().zip(&window))
        {
            *dst = x * w;
        }
        plan.process(&mut buf, false)?;
        for (k, v) in buf.iter().enumerate() {
            let row = (k + half) % nfft;
            bins[row * frames + m] = *v;
        }
    }
    Ok(Spectrogram { bins, nfft, frames })
}

/// `20·log10(|X| + ε)` for every bin, same layout as the spectrogram.
pub fn log_magnitude(spec: &Spectrogram, eps: f64) -> RealMatrix {
    RealMatrix {
        rows: spec.nfft,
        cols: spec.frames,
        data: spec
            .bins
            .iter()
            .map(|c| 20.0 * (c.norm() + eps).log10())
            .collect(),
    }
}
