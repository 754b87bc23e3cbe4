use super::init::kaiming_uniform;
use super::ops::{self, ConvGeometry, PoolKind};
use super::tensor::{Scalar, Tensor};
use super::{NnError, Result};
use rand_pcg::Pcg32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Trainable parameter or persistent non-trainable buffer (running statistics).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateKind {
    Param,
    Buffer,
}

/// A differentiable layer. `forward` caches what `backward` needs; `backward`
/// accumulates parameter gradients and returns the input gradient.
pub trait Module<T: Scalar> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>>;
    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>>;
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, StateKind, &Tensor<T>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, StateKind, &mut Tensor<T>));
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Number of trainable scalars.
pub fn param_count<T: Scalar, M: Module<T> + ?Sized>(m: &M) -> usize {
    let mut n = 0;
    m.visit("", &mut |_, kind, t| {
        if kind == StateKind::Param {
            n += t.numel();
        }
    });
    n
}

pub fn zero_grads<T: Scalar, M: Module<T> + ?Sized>(m: &mut M) {
    m.visit_mut("", &mut |_, _, t| t.zero_grad());
}

/// Named copies of every parameter and buffer in visiting order.
pub fn state_dict<T: Scalar, M: Module<T> + ?Sized>(m: &M) -> Vec<(String, StateKind, Tensor<T>)> {
    let mut out = Vec::new();
    m.visit("", &mut |name, kind, t| {
        let mut copy = Tensor::from_vec(t.shape(), t.data().to_vec()).expect("same shape");
        if kind == StateKind::Param {
            copy.enable_grad();
        }
        out.push((name.to_string(), kind, copy));
    });
    out
}

fn missing_cache(layer: &str) -> NnError {
    NnError::Mode(format!("{layer}: backward called without a cached forward pass"))
}

#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub geom: ConvGeometry,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    /// Kaiming-uniform weights over fan-in, zero bias.
    pub fn new(
        cin: usize,
        cout: usize,
        (kh, kw): (usize, usize),
        geom: ConvGeometry,
        bias: bool,
        rng: &mut Pcg32,
    ) -> Result<Self> {
        if geom.groups == 0 || cin % geom.groups != 0 || cout % geom.groups != 0 {
            return Err(NnError::Dimension(format!(
                "conv {cin}->{cout} not divisible into {} groups",
                geom.groups
            )));
        }
        let cin_g = cin / geom.groups;
        let shape = [cout, cin_g, kh, kw];
        let weight = Tensor::param(&shape, kaiming_uniform(cin_g * kh * kw, cout * cin_g * kh * kw, rng))?;
        let bias = if bias {
            Some(Tensor::param(&[cout], vec![T::zero(); cout])?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            geom,
            input: None,
        })
    }

    pub fn from_parts(weight: Tensor<T>, bias: Option<Tensor<T>>, geom: ConvGeometry) -> Self {
        let mut weight = weight;
        weight.enable_grad();
        let bias = bias.map(|mut b| {
            b.enable_grad();
            b
        });
        Self {
            weight,
            bias,
            geom,
            input: None,
        }
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weight.shape()[2], self.weight.shape()[3])
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1] * self.geom.groups
    }
}

impl<T: Scalar> Module<T> for Conv2d<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let _ = mode;
        let y = ops::conv2d_forward(x, &self.weight, self.bias.as_ref(), &self.geom)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.input.as_ref().ok_or_else(|| missing_cache("conv2d"))?;
        let (gx, gw, gb) = ops::conv2d_backward(x, &self.weight, &self.geom, grad_out)?;
        self.weight.accumulate_grad(gw.data());
        if let Some(b) = self.bias.as_mut() {
            b.accumulate_grad(&gb);
        }
        Ok(gx)
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, StateKind, &Tensor<T>)) {
        f(&join(prefix, "weight"), StateKind::Param, &self.weight);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), StateKind::Param, b);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, StateKind, &mut Tensor<T>)) {
        f(&join(prefix, "weight"), StateKind::Param, &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), StateKind::Param, b);
        }
    }
}

/// Batch normalization over `(N, C, H, W)` or `(N, C)` inputs, per channel.
#[derive(Debug, Clone)]
pub struct BatchNorm<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BnCache<T>>,
}

#[derive(Debug, Clone)]
struct BnCache<T> {
    shape: Vec<usize>,
    xhat: Vec<T>,
    inv_std: Vec<T>,
    mode: Mode,
}

fn bn_layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape {
        [n, c] => Ok((*n, *c, 1)),
        [n, c, h, w] => Ok((*n, *c, h * w)),
        _ => Err(NnError::Dimension(format!(
            "batch norm expects (N, C) or (N, C, H, W), got {shape:?}"
        ))),
    }
}

impl<T: Scalar> BatchNorm<T> {
    pub const DEFAULT_MOMENTUM: f64 = 0.1;
    pub const DEFAULT_EPS: f64 = 1e-5;

    /// γ = 1, β = 0, running mean 0 and variance 1.
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::param(&[channels], vec![T::one(); channels]).expect("shape"),
            beta: Tensor::param(&[channels], vec![T::zero(); channels]).expect("shape"),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            momentum: Self::DEFAULT_MOMENTUM,
            eps: Self::DEFAULT_EPS,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.numel()
    }

    /// Per-channel `(scale, shift)` of the eval-mode affine map.
    pub fn eval_affine(&self) -> (Vec<T>, Vec<T>) {
        let eps = T::of(self.eps);
        let mut scale = Vec::with_capacity(self.channels());
        let mut shift = Vec::with_capacity(self.channels());
        for c in 0..self.channels() {
            let s = self.gamma.data()[c] / (self.running_var.data()[c] + eps).sqrt();
            scale.push(s);
            shift.push(self.beta.data()[c] - s * self.running_mean.data()[c]);
        }
        (scale, shift)
    }
}

impl<T: Scalar> Module<T> for BatchNorm<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (n, c, plane) = bn_layout(x.shape())?;
        if c != self.channels() {
            return Err(NnError::Dimension(format!(
                "batch norm over {} channels got {c}",
                self.channels()
            )));
        }
        let xd = x.data();
        let mut y = vec![T::zero(); xd.len()];
        let mut xhat = vec![T::zero(); xd.len()];
        let mut inv_std = vec![T::zero(); c];
        let eps = T::of(self.eps);
        match mode {
            Mode::Train => {
                if n < 2 {
                    return Err(NnError::Mode(
                        "batch norm in train mode needs a batch of at least 2".into(),
                    ));
                }
                let count = n * plane;
                let inv_count = T::of(1.0 / count as f64);
                let m = T::of(self.momentum);
                for ch in 0..c {
                    let mut mean = T::zero();
                    for s in 0..n {
                        mean += xd[(s * c + ch) * plane..(s * c + ch + 1) * plane].iter().copied().sum::<T>();
                    }
                    mean *= inv_count;
                    let mut var = T::zero();
                    for s in 0..n {
                        for &v in &xd[(s * c + ch) * plane..(s * c + ch + 1) * plane] {
                            let d = v - mean;
                            var += d * d;
                        }
                    }
                    let unbiased = var / T::of((count.max(2) - 1) as f64);
                    var *= inv_count;
                    let istd = T::one() / (var + eps).sqrt();
                    inv_std[ch] = istd;
                    let (g, b) = (self.gamma.data()[ch], self.beta.data()[ch]);
                    for s in 0..n {
                        let r = (s * c + ch) * plane..(s * c + ch + 1) * plane;
                        for i in r {
                            let h = (xd[i] - mean) * istd;
                            xhat[i] = h;
                            y[i] = g * h + b;
                        }
                    }
                    let rm = &mut self.running_mean.data_mut()[ch];
                    *rm = (T::one() - m) * *rm + m * mean;
                    let rv = &mut self.running_var.data_mut()[ch];
                    *rv = (T::one() - m) * *rv + m * unbiased;
                }
            }
            Mode::Eval => {
                for ch in 0..c {
                    let mean = self.running_mean.data()[ch];
                    let istd = T::one() / (self.running_var.data()[ch] + eps).sqrt();
                    inv_std[ch] = istd;
                    let (g, b) = (self.gamma.data()[ch], self.beta.data()[ch]);
                    for s in 0..n {
                        for i in (s * c + ch) * plane..(s * c + ch + 1) * plane {
                            let h = (xd[i] - mean) * istd;
                            xhat[i] = h;
                            y[i] = g * h + b;
                        }
                    }
                }
            }
        }
        self.cache = Some(BnCache {
            shape: x.shape().to_vec(),
            xhat,
            inv_std,
            mode,
        });
        Tensor::from_vec(x.shape(), y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.as_ref().ok_or_else(|| missing_cache("batch norm"))?;
        if grad_out.shape() != cache.shape.as_slice() {
            return Err(NnError::Dimension("batch norm gradient shape mismatch".into()));
        }
        let (n, c, plane) = bn_layout(&cache.shape)?;
        let g = grad_out.data();
        let mut gx = vec![T::zero(); g.len()];
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        let count = T::of((n * plane) as f64);
        for ch in 0..c {
            let mut sum_g = T::zero();
            let mut sum_gx = T::zero();
            for s in 0..n {
                for i in (s * c + ch) * plane..(s * c + ch + 1) * plane {
                    sum_g += g[i];
                    sum_gx += g[i] * cache.xhat[i];
                }
            }
            dgamma[ch] = sum_gx;
            dbeta[ch] = sum_g;
            let gamma = self.gamma.data()[ch];
            let istd = cache.inv_std[ch];
            for s in 0..n {
                for i in (s * c + ch) * plane..(s * c + ch + 1) * plane {
                    gx[i] = match cache.mode {
                        Mode::Train => {
                            gamma * istd / count * (count * g[i] - sum_g - cache.xhat[i] * sum_gx)
                        }
                        Mode::Eval => gamma * istd * g[i],
                    };
                }
            }
        }
        self.gamma.accumulate_grad(&dgamma);
        self.beta.accumulate_grad(&dbeta);
        Tensor::from_vec(&cache.shape, gx)
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, StateKind, &Tensor<T>)) {
        f(&join(prefix, "gamma"), StateKind::Param, &self.gamma);
        f(&join(prefix, "beta"), StateKind::Param, &self.beta);
        f(&join(prefix, "running_mean"), StateKind::Buffer, &self.running_mean);
        f(&join(prefix, "running_var"), StateKind::Buffer, &self.running_var);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, StateKind, &mut Tensor<T>)) {
        f(&join(prefix, "gamma"), StateKind::Param, &mut self.gamma);
        f(&join(prefix, "beta"), StateKind::Param, &mut self.beta);
        f(&join(prefix, "running_mean"), StateKind::Buffer, &mut self.running_mean);
        f(&join(prefix, "running_var"), StateKind::Buffer, &mut self.running_var);
    }
}

#[derive(Debug, Clone, Default)]
pub struct Silu<T> {
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Silu<T> {
    pub fn new() -> Self {
        Self { input: None }
    }
}

impl<T: Scalar> Module<T> for Silu<T> {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let y = Tensor::from_vec(x.shape(), x.data().iter().map(|&v| ops::silu(v)).collect())?;
        self.input = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.input.as_ref().ok_or_else(|| missing_cache("silu"))?;
        Tensor::from_vec(
            x.shape(),
            x.data()
                .iter()
                .zip(grad_out.data())
                .map(|(&v, &g)| g * ops::silu_grad(v))
                .collect(),
        )
    }

    fn visit(&self, _: &str, _: &mut dyn FnMut(&str, StateKind, &Tensor<T>)) {}
    fn visit_mut(&mut self, _: &str, _: &mut dyn FnMut(&str, StateKind, &mut Tensor<T>)) {}
}

#[derive(Debug, Clone, Default)]
pub struct Sigmoid<T> {
    output: Option<Tensor<T>>,
}

impl<T: Scalar> Sigmoid<T> {
    pub fn new() -> Self {
        Self { output: None }
    }
}

impl<T: Scalar> Module<T> for Sigmoid<T> {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let y = Tensor::from_vec(x.shape(), x.data().iter().map(|&v| ops::sigmoid(v)).collect())?;
        self.output = Some(y.clone());
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.output.as_ref().ok_or_else(|| missing_cache("sigmoid"))?;
        Tensor::from_vec(
            y.shape(),
            y.data()
                .iter()
                .zip(grad_out.data())
                .map(|(&s, &g)| g * s * (T::one() - s))
                .collect(),
        )
    }

    fn visit(&self, _: &str, _: &mut dyn FnMut(&str, StateKind, &Tensor<T>)) {}
    fn visit_mut(&mut self, _: &str, _: &mut dyn FnMut(&str, StateKind, &mut Tensor<T>)) {}
}

#[derive(Debug, Clone)]
pub struct Pool2d {
    pub kind: PoolKind,
    pub kernel: usize,
    pub stride: usize,
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl Pool2d {
    pub fn new(kind: PoolKind, kernel: usize, stride: usize) -> Self {
        Self {
            kind,
            kernel,
            stride,
            cache: None,
        }
    }
}

impl<T: Scalar> Module<T> for Pool2d {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let (y, arg) = ops::pool2d_forward(x, self.kind, self.kernel, self.stride)?;
        self.cache = Some((x.shape().to_vec(), arg));
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let (shape, arg) = self.cache.as_ref().ok_or_else(|| missing_cache("pool2d"))?;
        ops::pool2d_backward(shape, self.kind, self.kernel, self.stride, arg, grad_out)
    }

    fn visit(&self, _: &str, _: &mut dyn FnMut(&str, StateKind, &Tensor<T>)) {}
    fn visit_mut(&mut self, _: &str, _: &mut dyn FnMut(&str, StateKind, &mut Tensor<T>)) {}
}

#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    shape: Option<Vec<usize>>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        Self { shape: None }
    }
}

impl<T: Scalar> Module<T> for GlobalAvgPool {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let y = ops::global_avg_pool(x)?;
        self.shape = Some(x.shape().to_vec());
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self.shape.as_ref().ok_or_else(|| missing_cache("global average pool"))?;
        ops::global_avg_pool_backward(shape, grad_out)
    }

    fn visit(&self, _: &str, _: &mut dyn FnMut(&str, StateKind, &Tensor<T>)) {}
    fn visit_mut(&mut self, _: &str, _: &mut dyn FnMut(&str, StateKind, &mut Tensor<T>)) {}
}

/// Convolution → batch norm → SiLU.
#[derive(Debug, Clone)]
pub struct ConvBnAct<T> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm<T>,
    act: Silu<T>,
}

impl<T: Scalar> ConvBnAct<T> {
    pub fn new(cin: usize, cout: usize, k: usize, stride: usize, rng: &mut Pcg32) -> Result<Self> {
        let geom = ConvGeometry::same(k, k).with_stride(stride);
        Ok(Self {
            conv: Conv2d::new(cin, cout, (k, k), geom, false, rng)?,
            bn: BatchNorm::new(cout),
            act: Silu::new(),
        })
    }
}

impl<T: Scalar> Module<T> for ConvBnAct<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let y = self.conv.forward(x, mode)?;
        let y = self.bn.forward(&y, mode)?;
        self.act.forward(&y, mode)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let g = self.act.backward(grad_out)?;
        let g = self.bn.backward(&g)?;
        self.conv.backward(&g)
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, StateKind, &Tensor<T>)) {
        self.conv.visit(&join(prefix, "conv"), f);
        self.bn.visit(&join(prefix, "bn"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, StateKind, &mut Tensor<T>)) {
        self.conv.visit_mut(&join(prefix, "conv"), f);
        self.bn.visit_mut(&join(prefix, "bn"), f);
    }
}

/// Layers applied in order; state names are prefixed by the layer index.
pub struct Sequential<T> {
    pub layers: Vec<Box<dyn Module<T> + Send>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new(layers: Vec<Box<dyn Module<T> + Send>>) -> Self {
        Self { layers }
    }
}

impl<T: Scalar> Module<T> for Sequential<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut y = x.clone();
        for l in &mut self.layers {
            y = l.forward(&y, mode)?;
        }
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = grad_out.clone();
        for l in self.layers.iter_mut().rev() {
            g = l.backward(&g)?;
        }
        Ok(g)
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, StateKind, &Tensor<T>)) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &i.to_string()), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, StateKind, &mut Tensor<T>)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &i.to_string()), f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn sample(shape: &[usize], seed: u64, scale: f64) -> Tensor<f64> {
        let mut rng = Pcg32::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, kaiming_uniform::<f64>(1, n, &mut rng).into_iter().map(|v| v * scale).collect()).unwrap()
    }

    #[test]
    fn batchnorm_train_normalizes() {
        let mut bn = BatchNorm::<f64>::new(3);
        let x = sample(&[4, 3, 5, 5], 1, 3.0);
        let y = bn.forward(&x, Mode::Train).unwrap();
        let plane = 25;
        for ch in 0..3 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|s| y.data()[(s * 3 + ch) * plane..(s * 3 + ch + 1) * plane].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-5, "{var}");
        }
    }

    #[test]
    fn batchnorm_eval_identity() {
        let mut bn = BatchNorm::<f64>::new(2);
        bn.eps = 0.0;
        let x = sample(&[1, 2, 3, 3], 2, 1.0);
        let y = bn.forward(&x, Mode::Eval).unwrap();
        assert!(y.max_abs_diff(&x) < 1e-15);
    }

    #[test]
    fn batchnorm_rejects_single_sample_training() {
        let mut bn = BatchNorm::<f32>::new(2);
        let x = Tensor::zeros(&[1, 2, 4, 4]);
        assert!(matches!(bn.forward(&x, Mode::Train), Err(NnError::Mode(_))));
    }

    #[test]
    fn batchnorm_updates_running_stats() {
        let mut bn = BatchNorm::<f64>::new(1);
        let x = Tensor::from_vec(&[2, 1], vec![1.0, 3.0]).unwrap();
        bn.forward(&x, Mode::Train).unwrap();
        assert!((bn.running_mean.data()[0] - 0.2).abs() < 1e-12);
        // unbiased variance 2 → 0.9·1 + 0.1·2
        assert!((bn.running_var.data()[0] - 1.1).abs() < 1e-12);
    }

    #[test]
    fn backward_without_forward_is_an_error() {
        let mut rng = Pcg32::seed_from_u64(0);
        let mut conv = Conv2d::<f32>::new(1, 1, (3, 3), ConvGeometry::same(3, 3), true, &mut rng).unwrap();
        assert!(conv.backward(&Tensor::zeros(&[1, 1, 2, 2])).is_err());
    }

    #[test]
    fn conv_param_count_matches_hand_count() {
        let mut rng = Pcg32::seed_from_u64(0);
        let conv = Conv2d::<f32>::new(3, 16, (3, 3), ConvGeometry::same(3, 3), true, &mut rng).unwrap();
        assert_eq!(param_count(&conv), 448);
    }
}
