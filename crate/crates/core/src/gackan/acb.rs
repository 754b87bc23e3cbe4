use super::{GacError, Result};
use crate::nncore::{join, BatchNorm, Conv2d, ConvGeometry, Mode, Module, Scalar, StateKind, Tensor};
use rand_pcg::Pcg32;

/// Asymmetric convolution block: parallel d×d, d×1 and 1×d convolutions, each
/// followed by its own batch norm, summed.
#[derive(Debug, Clone)]
pub struct AcbConv<T> {
    pub square: Conv2d<T>,
    pub ver: Conv2d<T>,
    pub hor: Conv2d<T>,
    pub bn_square: BatchNorm<T>,
    pub bn_ver: BatchNorm<T>,
    pub bn_hor: BatchNorm<T>,
}

impl<T: Scalar> AcbConv<T> {
    pub fn new(
        cin: usize,
        cout: usize,
        d: usize,
        stride: usize,
        groups: usize,
        rng: &mut Pcg32,
    ) -> Result<Self> {
        if d % 2 == 0 {
            return Err(GacError::Config(format!("ACB kernel size must be odd, got {d}")));
        }
        let geom = |kh: usize, kw: usize| ConvGeometry::same(kh, kw).with_stride(stride).with_groups(groups);
        Ok(Self {
            square: Conv2d::new(cin, cout, (d, d), geom(d, d), false, rng)?,
            ver: Conv2d::new(cin, cout, (d, 1), geom(d, 1), false, rng)?,
            hor: Conv2d::new(cin, cout, (1, d), geom(1, d), false, rng)?,
            bn_square: BatchNorm::new(cout),
            bn_ver: BatchNorm::new(cout),
            bn_hor: BatchNorm::new(cout),
        })
    }

    pub fn kernel_size(&self) -> usize {
        self.square.kernel().0
    }

    /// Folds each branch's batch norm into its kernel and adds the asymmetric
    /// kernels into the central column and row of the square kernel.
    pub fn fuse(&self) -> Result<FusedConv<T>> {
        let d = self.kernel_size();
        let c = d / 2;
        let cout = self.square.out_channels();
        let cin_g = self.square.weight.shape()[1];
        let mut weight = vec![T::zero(); cout * cin_g * d * d];
        let mut bias = vec![T::zero(); cout];
        let branches = [
            (&self.square, &self.bn_square),
            (&self.ver, &self.bn_ver),
            (&self.hor, &self.bn_hor),
        ];
        for (conv, bn) in branches {
            let stats_ok = bn
                .running_mean
                .data()
                .iter()
                .chain(bn.running_var.data())
                .all(|v| v.is_finite())
                && bn.running_var.data().iter().all(|&v| v >= T::zero());
            if !stats_ok {
                return Err(GacError::Fusion("batch norm running statistics are missing".into()));
            }
            let (scale, shift) = bn.eval_affine();
            let (kh, kw) = conv.kernel();
            let (oy, ox) = (c - kh / 2, c - kw / 2);
            let w = conv.weight.data();
            for o in 0..cout {
                bias[o] += shift[o];
                for i in 0..cin_g {
                    for y in 0..kh {
                        for x in 0..kw {
                            let src = ((o * cin_g + i) * kh + y) * kw + x;
                            let dst = ((o * cin_g + i) * d + y + oy) * d + x + ox;
                            weight[dst] += scale[o] * w[src];
                        }
                    }
                }
            }
        }
        Ok(FusedConv {
            conv: Conv2d::from_parts(
                Tensor::from_vec(&[cout, cin_g, d, d], weight)?,
                Some(Tensor::from_vec(&[cout], bias)?),
                self.square.geom,
            ),
        })
    }
}

impl<T: Scalar> Module<T> for AcbConv<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> crate::nncore::Result<Tensor<T>> {
        let a = self.square.forward(x, mode)?;
        let mut y = self.bn_square.forward(&a, mode)?;
        let b = self.ver.forward(x, mode)?;
        y.add_assign(&self.bn_ver.forward(&b, mode)?)?;
        let h = self.hor.forward(x, mode)?;
        y.add_assign(&self.bn_hor.forward(&h, mode)?)?;
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> crate::nncore::Result<Tensor<T>> {
        let g = self.bn_square.backward(grad_out)?;
        let mut gx = self.square.backward(&g)?;
        let g = self.bn_ver.backward(grad_out)?;
        gx.add_assign(&self.ver.backward(&g)?)?;
        let g = self.bn_hor.backward(grad_out)?;
        gx.add_assign(&self.hor.backward(&g)?)?;
        Ok(gx)
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, StateKind, &Tensor<T>)) {
        self.square.visit(&join(prefix, "square"), f);
        self.bn_square.visit(&join(prefix, "bn_square"), f);
        self.ver.visit(&join(prefix, "ver"), f);
        self.bn_ver.visit(&join(prefix, "bn_ver"), f);
        self.hor.visit(&join(prefix, "hor"), f);
        self.bn_hor.visit(&join(prefix, "bn_hor"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, StateKind, &mut Tensor<T>)) {
        self.square.visit_mut(&join(prefix, "square"), f);
        self.bn_square.visit_mut(&join(prefix, "bn_square"), f);
        self.ver.visit_mut(&join(prefix, "ver"), f);
        self.bn_ver.visit_mut(&join(prefix, "bn_ver"), f);
        self.hor.visit_mut(&join(prefix, "hor"), f);
        self.bn_hor.visit_mut(&join(prefix, "bn_hor"), f);
    }
}

/// Single d×d convolution with bias, the inference form of an [`AcbConv`].
#[derive(Debug, Clone)]
pub struct FusedConv<T> {
    pub conv: Conv2d<T>,
}

impl<T: Scalar> Module<T> for FusedConv<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> crate::nncore::Result<Tensor<T>> {
        self.conv.forward(x, mode)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> crate::nncore::Result<Tensor<T>> {
        self.conv.backward(grad_out)
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, StateKind, &Tensor<T>)) {
        self.conv.visit(&join(prefix, "fused"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, StateKind, &mut Tensor<T>)) {
        self.conv.visit_mut(&join(prefix, "fused"), f);
    }
}

/// An ACB in either its training (three-branch) or deployed (fused) form.
#[derive(Debug, Clone)]
pub enum RepConv<T> {
    Branches(AcbConv<T>),
    Fused(FusedConv<T>),
}

impl<T: Scalar> RepConv<T> {
    pub fn fuse_in_place(&mut self) -> Result<()> {
        if let RepConv::Branches(acb) = self {
            *self = RepConv::Fused(acb.fuse()?);
        }
        Ok(())
    }

    pub fn is_fused(&self) -> bool {
        matches!(self, RepConv::Fused(_))
    }

    /// Underlying convolutions with their kernel footprint, for FLOPs counting.
    pub fn convs(&self) -> Vec<&Conv2d<T>> {
        match self {
            RepConv::Branches(a) => vec![&a.square, &a.ver, &a.hor],
            RepConv::Fused(f) => vec![&f.conv],
        }
    }

    pub fn batch_norm_count(&self) -> usize {
        match self {
            RepConv::Branches(_) => 3,
            RepConv::Fused(_) => 0,
        }
    }
}

impl<T: Scalar> Module<T> for RepConv<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> crate::nncore::Result<Tensor<T>> {
        match self {
            RepConv::Branches(a) => a.forward(x, mode),
            RepConv::Fused(f) => f.forward(x, mode),
        }
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> crate::nncore::Result<Tensor<T>> {
        match self {
            RepConv::Branches(a) => a.backward(grad_out),
            RepConv::Fused(f) => f.backward(grad_out),
        }
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, StateKind, &Tensor<T>)) {
        match self {
            RepConv::Branches(a) => a.visit(prefix, f),
            RepConv::Fused(c) => c.visit(prefix, f),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, StateKind, &mut Tensor<T>)) {
        match self {
            RepConv::Branches(a) => a.visit_mut(prefix, f),
            RepConv::Fused(c) => c.visit_mut(prefix, f),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::init::uniform;
    use crate::nncore::param_count;
    use rand::SeedableRng;

    #[test]
    fn zero_asymmetric_branches_give_plain_convolution() {
        let mut rng = Pcg32::seed_from_u64(1);
        let mut acb = AcbConv::<f64>::new(2, 3, 3, 1, 1, &mut rng).unwrap();
        acb.ver.weight.data_mut().fill(0.0);
        acb.hor.weight.data_mut().fill(0.0);
        for bn in [&mut acb.bn_square, &mut acb.bn_ver, &mut acb.bn_hor] {
            bn.eps = 0.0;
        }
        let x = Tensor::from_vec(&[1, 2, 4, 4], uniform(-1.0, 1.0, 32, &mut rng)).unwrap();
        let y = acb.forward(&x, Mode::Eval).unwrap();
        let want = acb.square.clone().forward(&x, Mode::Eval).unwrap();
        assert!(y.max_abs_diff(&want) < 1e-12);
        let fused = acb.fuse().unwrap();
        assert!(fused.conv.weight.max_abs_diff(&acb.square.weight) < 1e-12);
        assert!(fused.conv.bias.as_ref().unwrap().data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn fused_params_fewer_than_branches() {
        let mut rng = Pcg32::seed_from_u64(2);
        let acb = AcbConv::<f32>::new(4, 4, 3, 1, 4, &mut rng).unwrap();
        let fused = acb.fuse().unwrap();
        assert_eq!(param_count(&fused), 9 * 4 + 4);
        assert!(param_count(&fused) < param_count(&acb));
    }

    #[test]
    fn corrupt_statistics_refuse_to_fuse() {
        let mut rng = Pcg32::seed_from_u64(3);
        let mut acb = AcbConv::<f32>::new(1, 1, 3, 1, 1, &mut rng).unwrap();
        acb.bn_hor.running_var.data_mut()[0] = f32::NAN;
        assert!(matches!(acb.fuse(), Err(GacError::Fusion(_))));
    }
}
