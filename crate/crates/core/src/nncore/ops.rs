//! Functional kernels with explicit backward passes.

use serde::{Deserialize, Serialize};

use super::tensor::{Scalar, Tensor};
use super::{NnError, Result};

/// Stride, zero padding and channel grouping of a 2D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub groups: usize,
}

impl ConvGeometry {
    pub fn same(kh: usize, kw: usize) -> Self {
        Self {
            stride: 1,
            pad_h: kh / 2,
            pad_w: kw / 2,
            groups: 1,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn out_dims(&self, h: usize, w: usize, kh: usize, kw: usize) -> Result<(usize, usize)> {
        if self.stride == 0 {
            return Err(NnError::Dimension("stride must be at least 1".into()));
        }
        let (ph, pw) = (h + 2 * self.pad_h, w + 2 * self.pad_w);
        if ph < kh || pw < kw {
            return Err(NnError::Dimension(format!(
                "kernel {kh}x{kw} larger than padded input {ph}x{pw}"
            )));
        }
        Ok(((ph - kh) / self.stride + 1, (pw - kw) / self.stride + 1))
    }
}

/// Output indices `o` in `[start, end)` whose input index `o·s + k − p` lands in `[0, len)`.
#[inline]
fn valid_range(len: usize, out_len: usize, stride: usize, pad: usize, k: usize) -> (usize, usize) {
    let start = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    if len + pad < k + 1 {
        return (0, 0);
    }
    let end = ((len - 1 + pad - k) / stride + 1).min(out_len);
    (start.min(end), end)
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            lanes[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    ((lanes[0] + lanes[4]) + (lanes[1] + lanes[5])) + ((lanes[2] + lanes[6]) + (lanes[3] + lanes[7])) + tail
}

struct ConvShape {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    cin_g: usize,
    cout_g: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
}

fn conv_shape<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, g: &ConvGeometry) -> Result<ConvShape> {
    let (n, cin, h, w) = x.dims4()?;
    let (cout, cin_g, kh, kw) = weight.dims4()?;
    if g.groups == 0 || cin % g.groups != 0 || cout % g.groups != 0 {
        return Err(NnError::Dimension(format!(
            "{cin} input / {cout} output channels not divisible into {} groups",
            g.groups
        )));
    }
    if cin / g.groups != cin_g {
        return Err(NnError::Dimension(format!(
            "weight expects {cin_g} channels per group, input has {}",
            cin / g.groups
        )));
    }
    let (ho, wo) = g.out_dims(h, w, kh, kw)?;
    Ok(ConvShape {
        n,
        cin,
        h,
        w,
        cout,
        cin_g,
        cout_g: cout / g.groups,
        kh,
        kw,
        ho,
        wo,
    })
}

/// Cross-correlation with zero padding. `weight` is `(C_out, C_in/groups, kh, kw)`.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    g: &ConvGeometry,
) -> Result<Tensor<T>> {
    let s = conv_shape(x, weight, g)?;
    if let Some(b) = bias {
        if b.numel() != s.cout {
            return Err(NnError::Dimension(format!(
                "bias of {} for {} output channels",
                b.numel(),
                s.cout
            )));
        }
    }
    let (hw, owo) = (s.h * s.w, s.ho * s.wo);
    let stride = g.stride;
    let xd = x.data();
    let wd = weight.data();
    let mut y = vec![T::zero(); s.n * s.cout * owo];
    for n in 0..s.n {
        for oc in 0..s.cout {
            let grp = oc / s.cout_g;
            let yplane = &mut y[(n * s.cout + oc) * owo..(n * s.cout + oc + 1) * owo];
            if let Some(b) = bias {
                yplane.iter_mut().for_each(|v| *v = b.data()[oc]);
            }
            for icl in 0..s.cin_g {
                let ic = grp * s.cin_g + icl;
                let xplane = &xd[(n * s.cin + ic) * hw..(n * s.cin + ic + 1) * hw];
                for ky in 0..s.kh {
                    let (oy0, oy1) = valid_range(s.h, s.ho, stride, g.pad_h, ky);
                    for kx in 0..s.kw {
                        let (ox0, ox1) = valid_range(s.w, s.wo, stride, g.pad_w, kx);
                        if ox0 >= ox1 {
                            continue;
                        }
                        let wv = wd[((oc * s.cin_g + icl) * s.kh + ky) * s.kw + kx];
                        for oy in oy0..oy1 {
                            let iy = oy * stride + ky - g.pad_h;
                            let yrow = &mut yplane[oy * s.wo + ox0..oy * s.wo + ox1];
                            if stride == 1 {
                                let ix0 = ox0 + kx - g.pad_w;
                                let xrow = &xplane[iy * s.w + ix0..iy * s.w + ix0 + yrow.len()];
                                for (a, b) in yrow.iter_mut().zip(xrow) {
                                    *a += wv * *b;
                                }
                            } else {
                                for (j, a) in yrow.iter_mut().enumerate() {
                                    let ix = (ox0 + j) * stride + kx - g.pad_w;
                                    *a += wv * xplane[iy * s.w + ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[s.n, s.cout, s.ho, s.wo], y)
}

/// Gradients of [`conv2d_forward`] with respect to input, weight and bias.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    g: &ConvGeometry,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Vec<T>)> {
    let s = conv_shape(x, weight, g)?;
    if grad_out.shape() != [s.n, s.cout, s.ho, s.wo] {
        return Err(NnError::Dimension(format!(
            "output gradient {:?} does not match conv output {:?}",
            grad_out.shape(),
            [s.n, s.cout, s.ho, s.wo]
        )));
    }
    let (hw, owo) = (s.h * s.w, s.ho * s.wo);
    let stride = g.stride;
    let xd = x.data();
    let wd = weight.data();
    let gy = grad_out.data();
    let mut gx = vec![T::zero(); xd.len()];
    let mut gw = vec![T::zero(); wd.len()];
    let mut gb = vec![T::zero(); s.cout];
    for n in 0..s.n {
        for oc in 0..s.cout {
            let grp = oc / s.cout_g;
            let gplane = &gy[(n * s.cout + oc) * owo..(n * s.cout + oc + 1) * owo];
            gb[oc] += gplane.iter().copied().sum::<T>();
            for icl in 0..s.cin_g {
                let ic = grp * s.cin_g + icl;
                let xoff = (n * s.cin + ic) * hw;
                let xplane = &xd[xoff..xoff + hw];
                for ky in 0..s.kh {
                    let (oy0, oy1) = valid_range(s.h, s.ho, stride, g.pad_h, ky);
                    for kx in 0..s.kw {
                        let (ox0, ox1) = valid_range(s.w, s.wo, stride, g.pad_w, kx);
                        if ox0 >= ox1 {
                            continue;
                        }
                        let widx = ((oc * s.cin_g + icl) * s.kh + ky) * s.kw + kx;
                        let wv = wd[widx];
                        let mut acc = T::zero();
                        for oy in oy0..oy1 {
                            let iy = oy * stride + ky - g.pad_h;
                            let grow = &gplane[oy * s.wo + ox0..oy * s.wo + ox1];
                            if stride == 1 {
                                let ix0 = ox0 + kx - g.pad_w;
                                let r = iy * s.w + ix0..iy * s.w + ix0 + grow.len();
                                acc += dot(grow, &xplane[r.clone()]);
                                let gxrow = &mut gx[xoff + r.start..xoff + r.end];
                                for (a, b) in gxrow.iter_mut().zip(grow) {
                                    *a += wv * *b;
                                }
                            } else {
                                for (j, gv) in grow.iter().enumerate() {
                                    let ix = (ox0 + j) * stride + kx - g.pad_w;
                                    acc += *gv * xplane[iy * s.w + ix];
                                    gx[xoff + iy * s.w + ix] += wv * *gv;
                                }
                            }
                        }
                        gw[widx] += acc;
                    }
                }
            }
        }
    }
    Ok((
        Tensor::from_vec(x.shape(), gx)?,
        Tensor::from_vec(weight.shape(), gw)?,
        gb,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PoolKind {
    Max,
    Avg,
}

/// Windowed pooling without padding. For max pooling also returns the flat
/// input index selected for every output (first index wins ties).
pub fn pool2d_forward<T: Scalar>(
    x: &Tensor<T>,
    kind: PoolKind,
    kernel: usize,
    stride: usize,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, c, h, w) = x.dims4()?;
    if kernel == 0 || stride == 0 || kernel > h || kernel > w {
        return Err(NnError::Dimension(format!(
            "pool kernel {kernel} (stride {stride}) does not fit a {h}x{w} input"
        )));
    }
    let (ho, wo) = ((h - kernel) / stride + 1, (w - kernel) / stride + 1);
    let xd = x.data();
    let mut y = Vec::with_capacity(n * c * ho * wo);
    let mut arg = Vec::new();
    let inv = T::of(1.0 / (kernel * kernel) as f64);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                match kind {
                    PoolKind::Max => {
                        let mut best = base + oy * stride * w + ox * stride;
                        for ky in 0..kernel {
                            for kx in 0..kernel {
                                let idx = base + (oy * stride + ky) * w + ox * stride + kx;
                                if xd[idx] > xd[best] {
                                    best = idx;
                                }
                            }
                        }
                        y.push(xd[best]);
                        arg.push(best);
                    }
                    PoolKind::Avg => {
                        let mut acc = T::zero();
                        for ky in 0..kernel {
                            let row = base + (oy * stride + ky) * w + ox * stride;
                            for kx in 0..kernel {
                                acc += xd[row + kx];
                            }
                        }
                        y.push(acc * inv);
                    }
                }
            }
        }
    }
    Ok((Tensor::from_vec(&[n, c, ho, wo], y)?, arg))
}

pub fn pool2d_backward<T: Scalar>(
    input_shape: &[usize],
    kind: PoolKind,
    kernel: usize,
    stride: usize,
    argmax: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let mut gx = Tensor::zeros(input_shape);
    let (_, _, h, w) = gx.dims4()?;
    let (_, _, ho, wo) = grad_out.dims4()?;
    let gy = grad_out.data();
    let gxd = gx.data_mut();
    match kind {
        PoolKind::Max => {
            for (g, &idx) in gy.iter().zip(argmax) {
                gxd[idx] += *g;
            }
        }
        PoolKind::Avg => {
            let inv = T::of(1.0 / (kernel * kernel) as f64);
            for (plane, gp) in gy.chunks(ho * wo).enumerate() {
                let base = plane * h * w;
                for oy in 0..ho {
                    for ox in 0..wo {
                        let g = gp[oy * wo + ox] * inv;
                        for ky in 0..kernel {
                            let row = base + (oy * stride + ky) * w + ox * stride;
                            for kx in 0..kernel {
                                gxd[row + kx] += g;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(gx)
}

/// Per-channel spatial mean, `(N, C, H, W) → (N, C)`.
pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    if h == 0 || w == 0 {
        return Err(NnError::Dimension("empty spatial extent".into()));
    }
    let inv = T::of(1.0 / (h * w) as f64);
    let data = x
        .data()
        .chunks(h * w)
        .map(|p| p.iter().copied().sum::<T>() * inv)
        .collect();
    Tensor::from_vec(&[n, c], data)
}

pub fn global_avg_pool_backward<T: Scalar>(input_shape: &[usize], grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let plane = input_shape[2] * input_shape[3];
    let inv = T::of(1.0 / plane as f64);
    let mut data = Vec::with_capacity(grad_out.numel() * plane);
    for g in grad_out.data() {
        data.extend(std::iter::repeat_n(*g * inv, plane));
    }
    Tensor::from_vec(input_shape, data)
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn silu<T: Scalar>(x: T) -> T {
    x * sigmoid(x)
}

#[inline]
pub fn silu_grad<T: Scalar>(x: T) -> T {
    let s = sigmoid(x);
    s * (T::one() + x * (T::one() - s))
}

/// Zero-pads the bottom row and/or right column so both spatial dims are even.
pub fn pad_to_even<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    let (h2, w2) = (h + h % 2, w + w % 2);
    if (h2, w2) == (h, w) {
        return Ok(x.clone());
    }
    let mut out = Tensor::zeros(&[n, c, h2, w2]);
    let od = out.data_mut();
    for (plane, src) in x.data().chunks(h * w).enumerate() {
        for y in 0..h {
            od[plane * h2 * w2 + y * w2..plane * h2 * w2 + y * w2 + w].copy_from_slice(&src[y * w..(y + 1) * w]);
        }
    }
    Ok(out)
}

/// Inverse of [`pad_to_even`] for gradients: drops the padded row/column.
pub fn crop_to<T: Scalar>(g: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let (n, c, gh, gw) = g.dims4()?;
    if (gh, gw) == (h, w) {
        return Ok(g.clone());
    }
    let mut data = Vec::with_capacity(n * c * h * w);
    for plane in g.data().chunks(gh * gw) {
        for y in 0..h {
            data.extend_from_slice(&plane[y * gw..y * gw + w]);
        }
    }
    Tensor::from_vec(&[n, c, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_range_edges() {
        // 5 wide, pad 1, kernel index 0 → output 0 reads input -1
        assert_eq!(valid_range(5, 5, 1, 1, 0), (1, 5));
        assert_eq!(valid_range(5, 5, 1, 1, 2), (0, 4));
        assert_eq!(valid_range(5, 3, 2, 1, 0), (1, 3));
        let (a, b) = valid_range(1, 1, 1, 3, 0);
        assert!(a >= b);
    }

    #[test]
    fn identity_kernel_copies_input() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let w = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let g = ConvGeometry { stride: 1, pad_h: 0, pad_w: 0, groups: 1 };
        assert_eq!(conv2d_forward(&x, &w, None, &g).unwrap().data(), x.data());
    }

    #[test]
    fn pooling_examples() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (m, arg) = pool2d_forward(&x, PoolKind::Max, 2, 2).unwrap();
        assert_eq!(m.data(), &[4.0]);
        assert_eq!(arg, vec![3]);
        let (a, _) = pool2d_forward(&x, PoolKind::Avg, 2, 2).unwrap();
        assert_eq!(a.data(), &[2.5]);
        assert!(pool2d_forward(&x, PoolKind::Max, 3, 1).is_err());
    }

    #[test]
    fn max_pool_tie_goes_to_first_index() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 2, 2], vec![5.0, 5.0, 5.0, 5.0]).unwrap();
        let (_, arg) = pool2d_forward(&x, PoolKind::Max, 2, 2).unwrap();
        assert_eq!(arg, vec![0]);
        let g = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let gx = pool2d_backward(&[1, 1, 2, 2], PoolKind::Max, 2, 2, &arg, &g).unwrap();
        assert_eq!(gx.data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn gap_examples() {
        let x = Tensor::<f64>::from_vec(&[1, 2, 2, 2], vec![1.0, 3.0, 5.0, 7.0, 2.0, 2.0, 2.0, 2.0]).unwrap();
        let y = global_avg_pool(&x).unwrap();
        assert_eq!(y.data(), &[4.0, 2.0]);
        let g = Tensor::from_vec(&[1, 2], vec![1.0, 1.0]).unwrap();
        let gx = global_avg_pool_backward(&[1, 2, 2, 2], &g).unwrap();
        assert!(gx.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn activation_values() {
        assert_eq!(silu(0.0f64), 0.0);
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!(sigmoid(-800.0f64).is_finite() && sigmoid(800.0f64) == 1.0);
    }

    #[test]
    fn pad_and_crop_round_trip() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 3, 3], (0..9).map(f64::from).collect()).unwrap();
        let p = pad_to_even(&x).unwrap();
        assert_eq!(p.shape(), &[1, 1, 4, 4]);
        assert_eq!(p.data()[4..8], [3.0, 4.0, 5.0, 0.0]);
        assert_eq!(crop_to(&p, 3, 3).unwrap(), x);
    }
}
