//! Central finite-difference gradient checks for [`Module`] implementations.

use super::layers::{zero_grads, Mode, Module, StateKind};
use super::tensor::Tensor;
use super::Result;
use rand::{RngExt, SeedableRng};
use rand_pcg::Pcg32;

/// Max-norm relative error `max|a − n| / max(max|a|, max|n|, 1e−12)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = analytic
        .iter()
        .chain(numeric)
        .map(|v| v.abs())
        .fold(1e-12, f64::max);
    diff / scale
}

/// Gradient of `f` at `x` by central differences with step `h`.
pub fn numeric_gradient(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub input_error: f64,
    pub param_errors: Vec<(String, f64)>,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.param_errors
            .iter()
            .map(|(_, e)| *e)
            .fold(self.input_error, f64::max)
    }
}

/// Options for [`check_module`]. At most `max_elements` entries per tensor are
/// probed, chosen by a seeded draw when a tensor is larger.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    pub mode: Mode,
    pub seed: u64,
    pub max_elements: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            mode: Mode::Train,
            seed: 0,
            max_elements: 64,
        }
    }
}

fn probe_indices(n: usize, max: usize, rng: &mut Pcg32) -> Vec<usize> {
    if n <= max {
        (0..n).collect()
    } else {
        (0..max).map(|_| rng.random_range(0..n)).collect()
    }
}

fn weighted_loss<M: Module<f64> + ?Sized>(m: &mut M, x: &Tensor<f64>, r: &[f64], mode: Mode) -> Result<f64> {
    let y = m.forward(x, mode)?;
    Ok(y.data().iter().zip(r).map(|(a, b)| a * b).sum())
}

fn param_value<M: Module<f64> + ?Sized>(m: &mut M, which: usize, elem: usize, delta: f64) {
    let mut k = 0;
    m.visit_mut("", &mut |_, kind, t| {
        if kind == StateKind::Param {
            if k == which {
                t.data_mut()[elem] += delta;
            }
            k += 1;
        }
    });
}

/// Compares analytic gradients of `L = Σ r·module(x)` (r fixed random) against
/// central differences, for the input and every parameter.
pub fn check_module<M: Module<f64> + ?Sized>(
    m: &mut M,
    x: &Tensor<f64>,
    opts: GradCheckOptions,
) -> Result<GradCheckReport> {
    let mut rng = Pcg32::seed_from_u64(opts.seed);
    zero_grads(m);
    let y = m.forward(x, opts.mode)?;
    let r: Vec<f64> = (0..y.numel()).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let gout = Tensor::from_vec(y.shape(), r.clone())?;
    let gx = m.backward(&gout)?;

    let mut analytic_params = Vec::new();
    m.visit("", &mut |name, kind, t| {
        if kind == StateKind::Param {
            analytic_params.push((name.to_string(), t.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()])));
        }
    });

    let h = opts.step;
    let idx = probe_indices(x.numel(), opts.max_elements, &mut rng);
    let mut probe = x.clone();
    let mut num = Vec::with_capacity(idx.len());
    let mut ana = Vec::with_capacity(idx.len());
    for &i in &idx {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = weighted_loss(m, &probe, &r, opts.mode)?;
        probe.data_mut()[i] = orig - h;
        let down = weighted_loss(m, &probe, &r, opts.mode)?;
        probe.data_mut()[i] = orig;
        num.push((up - down) / (2.0 * h));
        ana.push(gx.data()[i]);
    }
    let input_error = relative_error(&ana, &num);

    let mut param_errors = Vec::new();
    for (p, (name, grad)) in analytic_params.iter().enumerate() {
        let idx = probe_indices(grad.len(), opts.max_elements, &mut rng);
        let mut num = Vec::with_capacity(idx.len());
        let mut ana = Vec::with_capacity(idx.len());
        for &i in &idx {
            param_value(m, p, i, h);
            let up = weighted_loss(m, x, &r, opts.mode)?;
            param_value(m, p, i, -2.0 * h);
            let down = weighted_loss(m, x, &r, opts.mode)?;
            param_value(m, p, i, h);
            num.push((up - down) / (2.0 * h));
            ana.push(grad[i]);
        }
        param_errors.push((name.clone(), relative_error(&ana, &num)));
    }
    Ok(GradCheckReport {
        input_error,
        param_errors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numeric_gradient_of_quadratic() {
        let g = numeric_gradient(&mut |x| x[0] * x[0] + 3.0 * x[1], &[2.0, 1.0], 1e-5);
        assert!(relative_error(&g, &[4.0, 3.0]) < 1e-9);
    }

    #[test]
    fn relative_error_of_equal_vectors_is_zero() {
        assert_eq!(relative_error(&[1.0, -2.0], &[1.0, -2.0]), 0.0);
        assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
    }
}
