use super::stft::{log_magnitude, stft, RealMatrix, StftConfig};
use super::{DspError, Result};
use crate::sigsynth::ComplexSignal;

/// Anchors of the blue-to-yellow colormap at t = 0, .25, .5, .75, 1.
pub const COLORMAP_ANCHORS: [[f64; 3]; 5] = [
    [0.03, 0.09, 0.42],
    [0.08, 0.35, 0.65],
    [0.12, 0.62, 0.60],
    [0.55, 0.82, 0.35],
    [1.0, 1.0, 0.0],
];

/// Piecewise-linear RGB lookup; `t` is clamped to [0, 1].
pub fn colormap(t: f64) -> [f64; 3] {
    let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
    let pos = t * 4.0;
    let seg = (pos.floor() as usize).min(3);
    let frac = pos - seg as f64;
    let (a, b) = (COLORMAP_ANCHORS[seg], COLORMAP_ANCHORS[seg + 1]);
    [
        a[0] + (b[0] - a[0]) * frac,
        a[1] + (b[1] - a[1]) * frac,
        a[2] + (b[2] - a[2]) * frac,
    ]
}

/// Three-channel float image in `[0, 1]`, CHW layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrogramImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
}

impl SpectrogramImage {
    pub const CHANNELS: usize = 3;

    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.pixels[(c * self.height + y) * self.width + x]
    }

    pub fn shape(&self) -> [usize; 3] {
        [Self::CHANNELS, self.height, self.width]
    }
}

/// Per-image min-max normalization followed by `x^gamma`. A constant input
/// maps to all zeros.
pub fn normalized_intensity(log_mag: &RealMatrix, gamma: f64) -> RealMatrix {
    let (lo, hi) = log_mag
        .data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    let data = if range > 0.0 && range.is_finite() {
        log_mag
            .data
            .iter()
            .map(|&v| ((v - lo) / range).clamp(0.0, 1.0).powf(gamma))
            .collect()
    } else {
        vec![0.0; log_mag.data.len()]
    };
    RealMatrix {
        rows: log_mag.rows,
        cols: log_mag.cols,
        data,
    }
}

/// Source coordinate and blend weight for output index `o` under the
/// half-pixel-center convention without corner alignment.
fn source_taps(o: usize, src: usize, dst: usize) -> (usize, usize, f64) {
    let scale = src as f64 / dst as f64;
    let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(src - 1);
    (i0, i1, s - i0 as f64)
}

/// Bilinear resize of a colormapped intensity matrix. The colormap is evaluated
/// at the four taps of each output pixel, identical to colormapping the full
/// matrix first and resizing each channel.
pub fn resize_colormapped(intensity: &RealMatrix, height: usize, width: usize) -> SpectrogramImage {
    let plane = height * width;
    let mut pixels = vec![0f32; 3 * plane];
    let cols: Vec<_> = (0..width)
        .map(|x| source_taps(x, intensity.cols, width))
        .collect();
    for y in 0..height {
        let (r0, r1, wy) = source_taps(y, intensity.rows, height);
        for (x, &(c0, c1, wx)) in cols.iter().enumerate() {
            let p00 = colormap(intensity.at(r0, c0));
            let p01 = colormap(intensity.at(r0, c1));
            let p10 = colormap(intensity.at(r1, c0));
            let p11 = colormap(intensity.at(r1, c1));
            for ch in 0..3 {
                let top = p00[ch] * (1.0 - wx) + p01[ch] * wx;
                let bottom = p10[ch] * (1.0 - wx) + p11[ch] * wx;
                let v = top * (1.0 - wy) + bottom * wy;
                pixels[ch * plane + y * width + x] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
    SpectrogramImage {
        height,
        width,
        pixels,
    }
}

/// STFT → log magnitude → min-max → gamma → colormap → bilinear resize → clamp.
pub fn image_pipeline(sig: &ComplexSignal, cfg: &StftConfig) -> Result<SpectrogramImage> {
    cfg.validate()?;
    let spec = stft(sig, cfg)?;
    let log_mag = log_magnitude(&spec, cfg.eps);
    if log_mag.data.iter().any(|v| !v.is_finite()) {
        return Err(DspError::NonFinite("log spectrogram".into()));
    }
    let intensity = normalized_intensity(&log_mag, cfg.gamma);
    Ok(resize_colormapped(&intensity, cfg.out_height, cfg.out_width))
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    #[test]
    fn colormap_endpoints_and_anchors() {
        assert_eq!(colormap(0.0), COLORMAP_ANCHORS[0]);
        assert_eq!(colormap(1.0), [1.0, 1.0, 0.0]);
        assert_eq!(colormap(0.5), COLORMAP_ANCHORS[2]);
        assert_eq!(colormap(-3.0), COLORMAP_ANCHORS[0]);
        let mid = colormap(0.125);
        assert!((mid[1] - 0.22).abs() < 1e-12);
    }

    #[test]
    fn constant_image_normalizes_to_zero() {
        let m = RealMatrix { rows: 2, cols: 2, data: vec![-3.0; 4] };
        assert!(normalized_intensity(&m, 0.9).data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_resize_keeps_pixels() {
        let m = RealMatrix { rows: 2, cols: 3, data: vec![0.0, 0.25, 0.5, 0.75, 1.0, 0.1] };
        let img = resize_colormapped(&m, 2, 3);
        for r in 0..2 {
            for c in 0..3 {
                let want = colormap(m.at(r, c));
                for ch in 0..3 {
                    assert!((img.at(ch, r, c) as f64 - want[ch]).abs() < 1e-7);
                }
            }
        }
    }

    #[test]
    fn downsample_by_two_averages_pairs() {
        // half-pixel centers put every output sample midway between two sources
        let m = RealMatrix { rows: 1, cols: 4, data: vec![0.0, 0.5, 0.5, 1.0] };
        let img = resize_colormapped(&m, 1, 2);
        let a = colormap(0.0)[0] * 0.5 + colormap(0.5)[0] * 0.5;
        assert!((img.at(0, 0, 0) as f64 - a).abs() < 1e-7);
    }

    #[test]
    fn zero_signal_gives_uniform_low_color() {
        let sig = ComplexSignal::new(vec![Complex64::new(0.0, 0.0); 2000], 2e6);
        let img = image_pipeline(&sig, &StftConfig::desk()).unwrap();
        assert_eq!(img.shape(), [3, 64, 64]);
        let c0 = colormap(0.0);
        for ch in 0..3 {
            for y in 0..64 {
                for x in 0..64 {
                    assert!((img.at(ch, y, x) as f64 - c0[ch]).abs() < 1e-7);
                }
            }
        }
    }
}
