use crate::nncore::ops::{sigmoid, silu, silu_grad};
use crate::nncore::{
    join, BatchNorm, Conv2d, ConvGeometry, Mode, Module, NnError, Result, Scalar, StateKind, Tensor,
};
use rand_pcg::Pcg32;

/// Reduced width of the shared transform: `max(8, C / 8)`.
pub fn reduced_width(channels: usize) -> usize {
    (channels / 8).max(8)
}

/// Coordinate attention: per-row and per-column sigmoid gates computed from
/// directional average pools through a shared 1×1 reduce → BN → SiLU and two
/// 1×1 expansions.
#[derive(Debug, Clone)]
pub struct CoordAttention<T> {
    pub reduce: Conv2d<T>,
    pub bn: BatchNorm<T>,
    pub expand_h: Conv2d<T>,
    pub expand_w: Conv2d<T>,
    gate_override: Option<f64>,
    cache: Option<CaCache<T>>,
}

#[derive(Debug, Clone)]
struct CaCache<T> {
    x: Tensor<T>,
    reduced_pre: Tensor<T>,
    gh: Vec<T>,
    gw: Vec<T>,
}

impl<T: Scalar> CoordAttention<T> {
    pub fn new(channels: usize, rng: &mut Pcg32) -> Result<Self> {
        let mip = reduced_width(channels);
        let one = ConvGeometry::same(1, 1);
        Ok(Self {
            reduce: Conv2d::new(channels, mip, (1, 1), one, false, rng)?,
            bn: BatchNorm::new(mip),
            expand_h: Conv2d::new(mip, channels, (1, 1), one, true, rng)?,
            expand_w: Conv2d::new(mip, channels, (1, 1), one, true, rng)?,
            gate_override: None,
            cache: None,
        })
    }

    /// Replaces both gate vectors by a constant (test hook for ablations).
    pub fn set_gate_override(&mut self, gate: Option<f64>) {
        self.gate_override = gate;
    }

    pub fn channels(&self) -> usize {
        self.expand_h.out_channels()
    }

    /// Gates from the last forward pass as `(g_h[N·C·H], g_w[N·C·W])`.
    pub fn last_gates(&self) -> Option<(&[T], &[T])> {
        self.cache.as_ref().map(|c| (c.gh.as_slice(), c.gw.as_slice()))
    }
}

/// Splits `(N, C, 1, H + W)` into `(N, C, 1, H)` and `(N, C, 1, W)`.
fn split_width<T: Scalar>(t: &Tensor<T>, h: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let (n, c, _, hw) = t.dims4()?;
    let w = hw - h;
    let mut a = Vec::with_capacity(n * c * h);
    let mut b = Vec::with_capacity(n * c * w);
    for row in t.data().chunks(hw) {
        a.extend_from_slice(&row[..h]);
        b.extend_from_slice(&row[h..]);
    }
    Ok((Tensor::from_vec(&[n, c, 1, h], a)?, Tensor::from_vec(&[n, c, 1, w], b)?))
}

fn join_width<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, _, h) = a.dims4()?;
    let w = b.shape()[3];
    let mut out = Vec::with_capacity(n * c * (h + w));
    for (ra, rb) in a.data().chunks(h).zip(b.data().chunks(w)) {
        out.extend_from_slice(ra);
        out.extend_from_slice(rb);
    }
    Tensor::from_vec(&[n, c, 1, h + w], out)
}

impl<T: Scalar> Module<T> for CoordAttention<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (n, c, h, w) = x.dims4()?;
        if c != self.channels() {
            return Err(NnError::Dimension(format!(
                "coordinate attention over {} channels got {c}",
                self.channels()
            )));
        }
        let (gh, gw, reduced_pre) = if let Some(g) = self.gate_override {
            (vec![T::of(g); n * c * h], vec![T::of(g); n * c * w], Tensor::zeros(&[0]))
        } else {
            let inv_w = T::of(1.0 / w as f64);
            let inv_h = T::of(1.0 / h as f64);
            let mut pooled = vec![T::zero(); n * c * (h + w)];
            for (p, plane) in x.data().chunks(h * w).enumerate() {
                let dst = &mut pooled[p * (h + w)..(p + 1) * (h + w)];
                for i in 0..h {
                    dst[i] = plane[i * w..(i + 1) * w].iter().copied().sum::<T>() * inv_w;
                }
                for j in 0..w {
                    let mut s = T::zero();
                    for i in 0..h {
                        s += plane[i * w + j];
                    }
                    dst[h + j] = s * inv_h;
                }
            }
            let pooled = Tensor::from_vec(&[n, c, 1, h + w], pooled)?;
            let r = self.reduce.forward(&pooled, mode)?;
            let reduced_pre = self.bn.forward(&r, mode)?;
            let act = Tensor::from_vec(
                reduced_pre.shape(),
                reduced_pre.data().iter().map(|&v| silu(v)).collect(),
            )?;
            let (ah, aw) = split_width(&act, h)?;
            let gh = self.expand_h.forward(&ah, mode)?.into_data().into_iter().map(sigmoid).collect();
            let gw = self.expand_w.forward(&aw, mode)?.into_data().into_iter().map(sigmoid).collect();
            (gh, gw, reduced_pre)
        };
        let mut y = vec![T::zero(); x.numel()];
        for (p, (src, dst)) in x.data().chunks(h * w).zip(y.chunks_mut(h * w)).enumerate() {
            let rows = &gh[p * h..(p + 1) * h];
            let cols = &gw[p * w..(p + 1) * w];
            for i in 0..h {
                for j in 0..w {
                    dst[i * w + j] = src[i * w + j] * rows[i] * cols[j];
                }
            }
        }
        self.cache = Some(CaCache {
            x: x.clone(),
            reduced_pre,
            gh,
            gw,
        });
        Tensor::from_vec(x.shape(), y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| NnError::Mode("coordinate attention: backward without forward".into()))?;
        let (n, c, h, w) = cache.x.dims4()?;
        let g = grad_out.data();
        let xd = cache.x.data();
        let mut gx = vec![T::zero(); xd.len()];
        let mut dgh = vec![T::zero(); n * c * h];
        let mut dgw = vec![T::zero(); n * c * w];
        for p in 0..n * c {
            let off = p * h * w;
            let rows = &cache.gh[p * h..(p + 1) * h];
            let cols = &cache.gw[p * w..(p + 1) * w];
            for i in 0..h {
                for j in 0..w {
                    let k = off + i * w + j;
                    gx[k] = g[k] * rows[i] * cols[j];
                    let gxv = g[k] * xd[k];
                    dgh[p * h + i] += gxv * cols[j];
                    dgw[p * w + j] += gxv * rows[i];
                }
            }
        }
        if self.gate_override.is_none() {
            let pre_h: Vec<T> = dgh
                .iter()
                .zip(&cache.gh)
                .map(|(&d, &s)| d * s * (T::one() - s))
                .collect();
            let pre_w: Vec<T> = dgw
                .iter()
                .zip(&cache.gw)
                .map(|(&d, &s)| d * s * (T::one() - s))
                .collect();
            let dah = self.expand_h.backward(&Tensor::from_vec(&[n, c, 1, h], pre_h)?)?;
            let daw = self.expand_w.backward(&Tensor::from_vec(&[n, c, 1, w], pre_w)?)?;
            let dact = join_width(&dah, &daw)?;
            let dpre = Tensor::from_vec(
                dact.shape(),
                dact.data()
                    .iter()
                    .zip(cache.reduced_pre.data())
                    .map(|(&d, &v)| d * silu_grad(v))
                    .collect(),
            )?;
            let dr = self.bn.backward(&dpre)?;
            let dpooled = self.reduce.backward(&dr)?;
            let inv_w = T::of(1.0 / w as f64);
            let inv_h = T::of(1.0 / h as f64);
            for (p, dp) in dpooled.data().chunks(h + w).enumerate() {
                let plane = &mut gx[p * h * w..(p + 1) * h * w];
                for i in 0..h {
                    let a = dp[i] * inv_w;
                    for j in 0..w {
                        plane[i * w + j] += a + dp[h + j] * inv_h;
                    }
                }
            }
        }
        self.cache = Some(cache);
        Tensor::from_vec(grad_out.shape(), gx)
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, StateKind, &Tensor<T>)) {
        self.reduce.visit(&join(prefix, "reduce"), f);
        self.bn.visit(&join(prefix, "bn"), f);
        self.expand_h.visit(&join(prefix, "expand_h"), f);
        self.expand_w.visit(&join(prefix, "expand_w"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, StateKind, &mut Tensor<T>)) {
        self.reduce.visit_mut(&join(prefix, "reduce"), f);
        self.bn.visit_mut(&join(prefix, "bn"), f);
        self.expand_h.visit_mut(&join(prefix, "expand_h"), f);
        self.expand_w.visit_mut(&join(prefix, "expand_w"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::init::uniform;
    use rand::SeedableRng;

    fn input(seed: u64) -> Tensor<f64> {
        let mut rng = Pcg32::seed_from_u64(seed);
        Tensor::from_vec(&[2, 4, 3, 5], uniform(-2.0, 2.0, 120, &mut rng)).unwrap()
    }

    #[test]
    fn unit_gates_pass_input_through() {
        let mut rng = Pcg32::seed_from_u64(0);
        let mut ca = CoordAttention::<f64>::new(4, &mut rng).unwrap();
        ca.set_gate_override(Some(1.0));
        let x = input(1);
        assert_eq!(ca.forward(&x, Mode::Train).unwrap(), x);
        ca.set_gate_override(Some(0.5));
        let y = ca.forward(&x, Mode::Train).unwrap();
        assert!(y.max_abs_diff(&x.scale(0.25)) < 1e-15);
    }

    #[test]
    fn output_never_exceeds_input_magnitude() {
        let mut rng = Pcg32::seed_from_u64(4);
        let mut ca = CoordAttention::<f64>::new(4, &mut rng).unwrap();
        let x = input(2);
        let y = ca.forward(&x, Mode::Train).unwrap();
        assert!(x.data().iter().zip(y.data()).all(|(a, b)| b.abs() <= a.abs()));
        let (gh, gw) = ca.last_gates().unwrap();
        assert!(gh.iter().chain(gw).all(|&g| g > 0.0 && g < 1.0));
    }

    #[test]
    fn reduced_width_has_floor_of_eight() {
        assert_eq!(reduced_width(4), 8);
        assert_eq!(reduced_width(144), 18);
    }
}
