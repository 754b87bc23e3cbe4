use crate::nncore::init::uniform;
use crate::nncore::ops::{silu, silu_grad};
use crate::nncore::{join, Mode, Module, NnError, Result, Scalar, StateKind, Tensor};
use rand_pcg::Pcg32;
use serde::{Deserialize, Serialize};

/// Uniform B-spline grid over `[lo, hi]` with `intervals` spans, extended by
/// `order` knots on each side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplineGrid {
    pub lo: f64,
    pub hi: f64,
    pub intervals: usize,
    pub order: usize,
}

impl Default for SplineGrid {
    fn default() -> Self {
        Self {
            lo: -2.0,
            hi: 2.0,
            intervals: 5,
            order: 3,
        }
    }
}

impl SplineGrid {
    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / self.intervals as f64
    }

    /// `intervals + 2·order + 1` non-decreasing knots.
    pub fn knots(&self) -> Vec<f64> {
        let h = self.step();
        (0..=self.intervals + 2 * self.order)
            .map(|i| self.lo + (i as f64 - self.order as f64) * h)
            .collect()
    }

    pub fn basis_count(&self) -> usize {
        self.intervals + self.order
    }
}

/// All `intervals + order` basis values at `x` by the Cox–de Boor recursion,
/// with `x` clamped to the grid range. The top endpoint belongs to the last span.
pub fn bspline_basis(x: f64, grid: &SplineGrid) -> Vec<f64> {
    bspline_basis_with_derivative(x, grid).0
}

/// Basis values and their derivatives with respect to `x`. Outside the grid
/// range the clamped input makes every derivative zero.
pub fn bspline_basis_with_derivative(x: f64, grid: &SplineGrid) -> (Vec<f64>, Vec<f64>) {
    let t = grid.knots();
    let p = grid.order;
    let inside = x > grid.lo && x < grid.hi;
    let xc = if x.is_nan() { grid.lo } else { x.clamp(grid.lo, grid.hi) };
    // degree-0 indicators over the n_knots − 1 spans
    let spans = t.len() - 1;
    let mut span = p + ((xc - grid.lo) / grid.step()).floor() as usize;
    span = span.min(p + grid.intervals - 1);
    let mut b = vec![0.0; spans];
    b[span] = 1.0;
    let mut lower = b.clone();
    for d in 1..=p {
        lower.clone_from(&b);
        for i in 0..spans - d {
            let left = if t[i + d] > t[i] {
                (xc - t[i]) / (t[i + d] - t[i]) * lower[i]
            } else {
                0.0
            };
            let right = if t[i + d + 1] > t[i + 1] {
                (t[i + d + 1] - xc) / (t[i + d + 1] - t[i + 1]) * lower[i + 1]
            } else {
                0.0
            };
            b[i] = left + right;
        }
        for v in &mut b[spans - d..] {
            *v = 0.0;
        }
    }
    let n = grid.basis_count();
    let mut deriv = vec![0.0; n];
    if p > 0 && inside {
        for i in 0..n {
            let a = p as f64 / (t[i + p] - t[i]) * lower[i];
            let c = p as f64 / (t[i + p + 1] - t[i + 1]) * lower[i + 1];
            deriv[i] = a - c;
        }
    }
    b.truncate(n);
    (b, deriv)
}

/// Kolmogorov–Arnold layer: every edge `(out j, in i)` applies
/// `w_b·SiLU(x) + w_s·Σ_k c_k B_k(x)` and outputs sum over inputs.
#[derive(Debug, Clone)]
pub struct KanLayer<T> {
    pub grid: SplineGrid,
    /// `(out, in)`
    pub base_weight: Tensor<T>,
    /// `(out, in)`
    pub spline_weight: Tensor<T>,
    /// `(out, in, basis)`
    pub coeffs: Tensor<T>,
    cache: Option<KanCache<T>>,
}

#[derive(Debug, Clone)]
struct KanCache<T> {
    x: Tensor<T>,
    basis: Vec<T>,
    dbasis: Vec<T>,
}

impl<T: Scalar> KanLayer<T> {
    /// Base weights U(±1/√in), spline weights 1, coefficients U(±0.1/√in).
    pub fn new(d_in: usize, d_out: usize, grid: SplineGrid, rng: &mut Pcg32) -> Result<Self> {
        let nb = grid.basis_count();
        let bound = 1.0 / (d_in.max(1) as f64).sqrt();
        Ok(Self {
            grid,
            base_weight: Tensor::param(&[d_out, d_in], uniform(-bound, bound, d_out * d_in, rng))?,
            spline_weight: Tensor::param(&[d_out, d_in], vec![T::one(); d_out * d_in])?,
            coeffs: Tensor::param(
                &[d_out, d_in, nb],
                uniform(-0.1 * bound, 0.1 * bound, d_out * d_in * nb, rng),
            )?,
            cache: None,
        })
    }

    pub fn d_in(&self) -> usize {
        self.base_weight.shape()[1]
    }

    pub fn d_out(&self) -> usize {
        self.base_weight.shape()[0]
    }

    /// Σ |c| over every spline coefficient.
    pub fn l1(&self) -> f64 {
        self.coeffs.data().iter().map(|c| c.abs().to_f64_lossy()).sum()
    }

    /// Adds `lambda·sign(c)` to the coefficient gradient, with sign(0) = 0.
    pub fn add_l1_grad(&mut self, lambda: f64) {
        let lam = T::of(lambda);
        let (data, grad) = self.coeffs.data_and_grad_mut();
        for (g, &c) in grad.iter_mut().zip(data.iter()) {
            if c > T::zero() {
                *g += lam;
            } else if c < T::zero() {
                *g -= lam;
            }
        }
    }
}

/// Σ_l ||c_l||₁ over the given layers.
pub fn kan_l1<T: Scalar>(layers: &[&KanLayer<T>]) -> f64 {
    layers.iter().map(|l| l.l1()).sum()
}

impl<T: Scalar> Module<T> for KanLayer<T> {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let (n, d) = x.dims2()?;
        if d != self.d_in() {
            return Err(NnError::Dimension(format!(
                "KAN layer expects {} inputs, got {d}",
                self.d_in()
            )));
        }
        let nb = self.grid.basis_count();
        let dout = self.d_out();
        let mut basis = Vec::with_capacity(n * d * nb);
        let mut dbasis = Vec::with_capacity(n * d * nb);
        for &v in x.data() {
            let (b, db) = bspline_basis_with_derivative(v.to_f64_lossy(), &self.grid);
            basis.extend(b.into_iter().map(T::of));
            dbasis.extend(db.into_iter().map(T::of));
        }
        let wb = self.base_weight.data();
        let ws = self.spline_weight.data();
        let c = self.coeffs.data();
        let mut y = vec![T::zero(); n * dout];
        for s in 0..n {
            let xs = &x.data()[s * d..(s + 1) * d];
            for j in 0..dout {
                let mut acc = T::zero();
                for i in 0..d {
                    let b = &basis[(s * d + i) * nb..(s * d + i + 1) * nb];
                    let cj = &c[(j * d + i) * nb..(j * d + i + 1) * nb];
                    let spline: T = b.iter().zip(cj).map(|(&u, &v)| u * v).sum();
                    acc += wb[j * d + i] * silu(xs[i]) + ws[j * d + i] * spline;
                }
                y[s * dout + j] = acc;
            }
        }
        self.cache = Some(KanCache {
            x: x.clone(),
            basis,
            dbasis,
        });
        Tensor::from_vec(&[n, dout], y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| NnError::Mode("KAN layer: backward without forward".into()))?;
        let (n, d) = cache.x.dims2()?;
        let nb = self.grid.basis_count();
        let dout = self.d_out();
        if grad_out.shape() != [n, dout] {
            return Err(NnError::Dimension("KAN gradient shape mismatch".into()));
        }
        let g = grad_out.data();
        let wb = self.base_weight.data();
        let ws = self.spline_weight.data();
        let c = self.coeffs.data();
        let mut gx = vec![T::zero(); n * d];
        let mut gwb = vec![T::zero(); dout * d];
        let mut gws = vec![T::zero(); dout * d];
        let mut gc = vec![T::zero(); dout * d * nb];
        for s in 0..n {
            for i in 0..d {
                let xv = cache.x.data()[s * d + i];
                let (act, dact) = (silu(xv), silu_grad(xv));
                let b = &cache.basis[(s * d + i) * nb..(s * d + i + 1) * nb];
                let db = &cache.dbasis[(s * d + i) * nb..(s * d + i + 1) * nb];
                let mut gxi = T::zero();
                for j in 0..dout {
                    let go = g[s * dout + j];
                    let e = j * d + i;
                    let cj = &c[e * nb..(e + 1) * nb];
                    let spline: T = b.iter().zip(cj).map(|(&u, &v)| u * v).sum();
                    let dspline: T = db.iter().zip(cj).map(|(&u, &v)| u * v).sum();
                    gwb[e] += go * act;
                    gws[e] += go * spline;
                    let scale = go * ws[e];
                    for (k, &bk) in b.iter().enumerate() {
                        gc[e * nb + k] += scale * bk;
                    }
                    gxi += go * (wb[e] * dact + ws[e] * dspline);
                }
                gx[s * d + i] = gxi;
            }
        }
        self.base_weight.accumulate_grad(&gwb);
        self.spline_weight.accumulate_grad(&gws);
        self.coeffs.accumulate_grad(&gc);
        Tensor::from_vec(&[n, d], gx)
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, StateKind, &Tensor<T>)) {
        f(&join(prefix, "base_weight"), StateKind::Param, &self.base_weight);
        f(&join(prefix, "spline_weight"), StateKind::Param, &self.spline_weight);
        f(&join(prefix, "coeffs"), StateKind::Param, &self.coeffs);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, StateKind, &mut Tensor<T>)) {
        f(&join(prefix, "base_weight"), StateKind::Param, &mut self.base_weight);
        f(&join(prefix, "spline_weight"), StateKind::Param, &mut self.spline_weight);
        f(&join(prefix, "coeffs"), StateKind::Param, &mut self.coeffs);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn knot_vector_shape() {
        let g = SplineGrid::default();
        let t = g.knots();
        assert_eq!(t.len(), 12);
        assert!(t.windows(2).all(|w| w[0] <= w[1]));
        assert!((t[3] + 2.0).abs() < 1e-15 && (t[8] - 2.0).abs() < 1e-15);
        assert_eq!(g.basis_count(), 8);
    }

    #[test]
    fn degree_zero_is_an_indicator() {
        let g = SplineGrid { order: 0, ..Default::default() };
        for x in [-2.0, -1.3, 0.0, 0.79, 2.0] {
            let b = bspline_basis(x, &g);
            assert_eq!(b.len(), 5);
            assert_eq!(b.iter().filter(|&&v| v == 1.0).count(), 1);
            assert_eq!(b.iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn partition_of_unity_and_clamping() {
        let g = SplineGrid::default();
        for k in 0..=400 {
            let x = -2.0 + 4.0 * k as f64 / 400.0;
            let s: f64 = bspline_basis(x, &g).iter().sum();
            assert!((s - 1.0).abs() < 1e-9, "{x}: {s}");
        }
        assert_eq!(bspline_basis(7.0, &g), bspline_basis(2.0, &g));
        assert_eq!(bspline_basis(-9.0, &g), bspline_basis(-2.0, &g));
    }

    #[test]
    fn zero_coefficients_leave_base_path() {
        let mut rng = Pcg32::seed_from_u64(0);
        let mut kan = KanLayer::<f64>::new(3, 2, SplineGrid::default(), &mut rng).unwrap();
        kan.coeffs.data_mut().fill(0.0);
        kan.base_weight.data_mut().fill(1.0);
        kan.spline_weight.data_mut().fill(3.7);
        let x = Tensor::from_vec(&[1, 3], vec![-1.0, 0.5, 2.5]).unwrap();
        let y = kan.forward(&x, Mode::Eval).unwrap();
        let want: f64 = x.data().iter().map(|&v| silu(v)).sum();
        assert!(y.data().iter().all(|&v| (v - want).abs() < 1e-12));
    }

    #[test]
    fn l1_examples_and_subgradient() {
        let mut rng = Pcg32::seed_from_u64(0);
        let grid = SplineGrid { intervals: 1, order: 1, ..Default::default() };
        let mut kan = KanLayer::<f64>::new(1, 2, grid, &mut rng).unwrap();
        kan.coeffs.data_mut().copy_from_slice(&[1.0, -2.0, 0.5, 0.0]);
        assert!((kan_l1(&[&kan]) - 3.5).abs() < 1e-15);
        kan.coeffs.zero_grad();
        kan.add_l1_grad(0.1);
        assert_eq!(kan.coeffs.grad().unwrap(), &[0.1, -0.1, 0.1, 0.0]);
        kan.coeffs.data_mut().fill(0.0);
        assert_eq!(kan_l1(&[&kan]), 0.0);
    }
}
