use num_complex::Complex64;
use std::f64::consts::TAU;

use super::{DspError, Result};

/// Precomputed twiddles and bit-reversal permutation for one power-of-two size.
#[derive(Debug, Clone)]
pub struct FftPlan {
    n: usize,
    twiddles: Vec<Complex64>,
    rev: Vec<usize>,
}

impl FftPlan {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || !n.is_power_of_two() {
            return Err(DspError::Size(format!("FFT length {n} is not a power of two")));
        }
        let bits = n.trailing_zeros();
        let rev = (0..n)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
            .collect();
        let twiddles = (0..n / 2)
            .map(|k| Complex64::cis(-TAU * k as f64 / n as f64))
            .collect();
        Ok(Self { n, twiddles, rev })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// In-place transform. Forward uses `exp(-j2πkn/N)`; inverse conjugates the
    /// twiddles and scales by `1/N`.
    pub fn process(&self, buf: &mut [Complex64], inverse: bool) -> Result<()> {
        if buf.len() != self.n {
            return Err(DspError::Size(format!(
                "buffer of {} for an FFT plan of {}",
                buf.len(),
                self.n
            )));
        }
        for i in 0..self.n {
            let j = self.rev[i];
            if i < j {
                buf.swap(i, j);
            }
        }
        let mut half = 1;
        while half < self.n {
            let stride = self.n / (2 * half);
            for start in (0..self.n).step_by(2 * half) {
                for k in 0..half {
                    let w = self.twiddles[k * stride];
                    let w = if inverse { w.conj() } else { w };
                    let a = buf[start + k];
                    let b = buf[start + k + half] * w;
                    buf[start + k] = a + b;
                    buf[start + k + half] = a - b;
                }
            }
            half *= 2;
        }
        if inverse {
            let scale = 1.0 / self.n as f64;
            buf.iter_mut().for_each(|c| *c *= scale);
        }
        Ok(())
    }
}

/// Radix-2 decimation-in-time FFT of a power-of-two length sequence.
pub fn fft(x: &[Complex64], inverse: bool) -> Result<Vec<Complex64>> {
    let plan = FftPlan::new(x.len())?;
    let mut buf = x.to_vec();
    plan.process(&mut buf, inverse)?;
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn impulse_transforms_to_ones() {
        let x = [1.0, 0.0, 0.0, 0.0].map(|r| Complex64::new(r, 0.0));
        let y = fft(&x, false).unwrap();
        assert!(y.iter().all(|c| (c - Complex64::new(1.0, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(matches!(fft(&[Complex64::new(0.0, 0.0); 6], false), Err(DspError::Size(_))));
        assert!(fft(&[], false).is_err());
    }

    #[test]
    fn length_one_is_identity() {
        let x = [Complex64::new(2.5, -1.0)];
        assert_eq!(fft(&x, false).unwrap(), x.to_vec());
        assert_eq!(fft(&x, true).unwrap(), x.to_vec());
    }
}
