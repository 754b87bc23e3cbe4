use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::{DspError, Result};
use crate::sigsynth::ComplexSignal;

/// Second-order section `(b0 + b1 z⁻¹ + b2 z⁻²) / (1 + a1 z⁻¹ + a2 z⁻²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b: [f64; 3],
    /// `a[0]` is always 1.
    pub a: [f64; 3],
}

impl Biquad {
    /// Both poles strictly inside the unit circle (Jury conditions for a quadratic).
    pub fn is_stable(&self) -> bool {
        let (a1, a2) = (self.a[1], self.a[2]);
        a2.abs() < 1.0 && a1.abs() < 1.0 + a2
    }

    pub fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b[0] + self.b[1] * z_inv + self.b[2] * z2) / (self.a[0] + self.a[1] * z_inv + self.a[2] * z2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IirFilter {
    pub sections: Vec<Biquad>,
    pub order: usize,
    pub cutoff_hz: f64,
    pub fs: f64,
}

impl IirFilter {
    pub fn is_stable(&self) -> bool {
        self.sections.iter().all(Biquad::is_stable)
    }

    /// Complex frequency response at `freq_hz`.
    pub fn response(&self, freq_hz: f64) -> Complex64 {
        let z_inv = Complex64::cis(-2.0 * PI * freq_hz / self.fs);
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |h, s| h * s.response(z_inv))
    }

    pub fn magnitude_db(&self, freq_hz: f64) -> f64 {
        20.0 * self.response(freq_hz).norm().log10()
    }
}

/// Butterworth low-pass by bilinear transform with the cutoff prewarped, as a
/// cascade of second-order sections (plus one first-order section for odd orders).
pub fn butterworth_lowpass(order: usize, cutoff_hz: f64, fs: f64) -> Result<IirFilter> {
    if order == 0 {
        return Err(DspError::Parameter("filter order must be at least 1".into()));
    }
    if !(fs > 0.0 && cutoff_hz > 0.0 && cutoff_hz < fs / 2.0) {
        return Err(DspError::Parameter(format!(
            "cutoff {cutoff_hz} Hz must lie in (0, {}) Hz",
            fs / 2.0
        )));
    }
    let k = (PI * cutoff_hz / fs).tan();
    let k2 = k * k;
    let mut sections = Vec::with_capacity(order.div_ceil(2));
    for i in 0..order / 2 {
        // analog pole pair at angle (2i+1)π/(2N) from the imaginary axis
        let q = 1.0 / (2.0 * ((2 * i + 1) as f64 * PI / (2 * order) as f64).sin());
        let norm = 1.0 / (1.0 + k / q + k2);
        let b0 = k2 * norm;
        sections.push(Biquad {
            b: [b0, 2.0 * b0, b0],
            a: [1.0, 2.0 * (k2 - 1.0) * norm, (1.0 - k / q + k2) * norm],
        });
    }
    if order % 2 == 1 {
        let norm = 1.0 / (1.0 + k);
        sections.push(Biquad {
            b: [k * norm, k * norm, 0.0],
            a: [1.0, (k - 1.0) * norm, 0.0],
        });
    }
    Ok(IirFilter {
        sections,
        order,
        cutoff_hz,
        fs,
    })
}

/// Causal transposed direct-form-II filtering from zero initial state. The
/// coefficients are real, so I and Q are filtered independently.
pub fn filter_apply(f: &IirFilter, sig: &ComplexSignal) -> ComplexSignal {
    let mut data = sig.samples.clone();
    for s in &f.sections {
        let [b0, b1, b2] = s.b;
        let [_, a1, a2] = s.a;
        let mut z1 = Complex64::new(0.0, 0.0);
        let mut z2 = Complex64::new(0.0, 0.0);
        for x in data.iter_mut() {
            let input = *x;
            let y = b0 * input + z1;
            z1 = b1 * input - a1 * y + z2;
            z2 = b2 * input - a2 * y;
            *x = y;
        }
    }
    ComplexSignal::new(data, sig.sample_rate_hz)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fourth_order_has_two_stable_sections() {
        let f = butterworth_lowpass(4, 1.0e6, 2.0e7).unwrap();
        assert_eq!(f.sections.len(), 2);
        assert!(f.is_stable());
    }

    #[test]
    fn unity_dc_gain() {
        for order in 1..=6 {
            let f = butterworth_lowpass(order, 3.0e5, 2.0e6).unwrap();
            assert!(f.magnitude_db(0.0).abs() < 1e-6, "order {order}");
        }
    }

    #[test]
    fn rejects_cutoff_out_of_range() {
        assert!(butterworth_lowpass(4, 0.0, 1.0).is_err());
        assert!(butterworth_lowpass(4, 0.5, 1.0).is_err());
        assert!(butterworth_lowpass(0, 0.1, 1.0).is_err());
    }

    #[test]
    fn dc_input_settles_to_one() {
        let f = butterworth_lowpass(4, 2.0e5, 2.0e6).unwrap();
        let x = ComplexSignal::new(vec![Complex64::new(1.0, 1.0); 4000], 2.0e6);
        let y = filter_apply(&f, &x);
        let last = y.samples.last().unwrap();
        assert!((last.re - 1.0).abs() < 1e-6 && (last.im - 1.0).abs() < 1e-6);
    }

    #[test]
    fn filtering_is_linear() {
        let f = butterworth_lowpass(4, 2.0e5, 2.0e6).unwrap();
        let x: Vec<Complex64> = (0..256)
            .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()))
            .collect();
        let a = Complex64::new(-2.5, 0.75);
        let lhs = filter_apply(&f, &ComplexSignal::new(x.iter().map(|v| a * v).collect(), 1.0));
        let rhs = filter_apply(&f, &ComplexSignal::new(x, 1.0));
        for (l, r) in lhs.samples.iter().zip(&rhs.samples) {
            assert!((l - a * r).norm() < 1e-12);
        }
    }
}
