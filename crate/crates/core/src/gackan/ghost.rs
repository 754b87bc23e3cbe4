use super::acb::{AcbConv, RepConv};
use super::attention::CoordAttention;
use super::Result;
use crate::nncore::{
    concat_channels, join, split_channels, ConvBnAct, Mode, Module, Scalar, Silu, StateKind, Tensor,
};
use rand_pcg::Pcg32;

/// Ghost unit: a k×k primary convolution yields ⌈C/2⌉ intrinsic channels, a
/// depthwise 3×3 ACB on them yields the ⌊C/2⌋ ghost channels, and coordinate
/// attention gates the concatenation.
#[derive(Debug, Clone)]
pub struct GhostUnit<T> {
    pub primary: ConvBnAct<T>,
    pub cheap: RepConv<T>,
    cheap_act: Silu<T>,
    pub attention: CoordAttention<T>,
    out_channels: usize,
}

impl<T: Scalar> GhostUnit<T> {
    pub const CHEAP_KERNEL: usize = 3;

    pub fn new(cin: usize, cout: usize, k: usize, rng: &mut Pcg32) -> Result<Self> {
        let intrinsic = cout.div_ceil(2);
        Ok(Self {
            primary: ConvBnAct::new(cin, intrinsic, k, 1, rng)?,
            cheap: RepConv::Branches(AcbConv::new(
                intrinsic,
                intrinsic,
                Self::CHEAP_KERNEL,
                1,
                intrinsic,
                rng,
            )?),
            cheap_act: Silu::new(),
            attention: CoordAttention::new(cout, rng)?,
            out_channels: cout,
        })
    }

    pub fn intrinsic_channels(&self) -> usize {
        self.out_channels.div_ceil(2)
    }

    pub fn ghost_channels(&self) -> usize {
        self.out_channels / 2
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn fuse(&mut self) -> Result<()> {
        self.cheap.fuse_in_place()
    }
}

impl<T: Scalar> Module<T> for GhostUnit<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> crate::nncore::Result<Tensor<T>> {
        let p = self.primary.forward(x, mode)?;
        let c = self.cheap.forward(&p, mode)?;
        let c = self.cheap_act.forward(&c, mode)?;
        let ghost = self.ghost_channels();
        let z = if ghost == self.intrinsic_channels() {
            concat_channels(&[&p, &c])?
        } else {
            let parts = split_channels(&c, &[ghost, self.intrinsic_channels() - ghost])?;
            concat_channels(&[&p, &parts[0]])?
        };
        self.attention.forward(&z, mode)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> crate::nncore::Result<Tensor<T>> {
        let gz = self.attention.backward(grad_out)?;
        let (intrinsic, ghost) = (self.intrinsic_channels(), self.ghost_channels());
        let mut parts = split_channels(&gz, &[intrinsic, ghost])?;
        let g_ghost = parts.pop().expect("two parts");
        let mut gp = parts.pop().expect("two parts");
        let g_cheap_out = if ghost == intrinsic {
            g_ghost
        } else {
            let (n, _, h, w) = g_ghost.dims4()?;
            let pad = Tensor::zeros(&[n, intrinsic - ghost, h, w]);
            concat_channels(&[&g_ghost, &pad])?
        };
        let g = self.cheap_act.backward(&g_cheap_out)?;
        gp.add_assign(&self.cheap.backward(&g)?)?;
        self.primary.backward(&gp)
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, StateKind, &Tensor<T>)) {
        self.primary.visit(&join(prefix, "primary"), f);
        self.cheap.visit(&join(prefix, "cheap"), f);
        self.attention.visit(&join(prefix, "attention"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, StateKind, &mut Tensor<T>)) {
        self.primary.visit_mut(&join(prefix, "primary"), f);
        self.cheap.visit_mut(&join(prefix, "cheap"), f);
        self.attention.visit_mut(&join(prefix, "attention"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::init::uniform;
    use rand::SeedableRng;

    #[test]
    fn channel_count_for_odd_and_even_widths() {
        let mut rng = Pcg32::seed_from_u64(0);
        for cout in [4usize, 5, 7, 8] {
            let mut unit = GhostUnit::<f64>::new(3, cout, 3, &mut rng).unwrap();
            let x = Tensor::from_vec(&[2, 3, 6, 6], uniform(-1.0, 1.0, 216, &mut rng)).unwrap();
            let y = unit.forward(&x, Mode::Train).unwrap();
            assert_eq!(y.shape(), &[2, cout, 6, 6]);
            assert_eq!(unit.intrinsic_channels() + unit.ghost_channels(), cout);
        }
    }

    #[test]
    fn ablated_unit_is_primary_then_zeros() {
        let mut rng = Pcg32::seed_from_u64(1);
        let mut unit = GhostUnit::<f64>::new(2, 5, 3, &mut rng).unwrap();
        unit.attention.set_gate_override(Some(1.0));
        unit.cheap.visit_mut("", &mut |name, _, t| {
            if !name.ends_with("running_var") && !name.ends_with("gamma") {
                t.data_mut().fill(0.0);
            }
        });
        let x = Tensor::from_vec(&[2, 2, 5, 5], uniform(-1.0, 1.0, 100, &mut rng)).unwrap();
        let y = unit.forward(&x, Mode::Eval).unwrap();
        let p = unit.primary.forward(&x, Mode::Eval).unwrap();
        let parts = split_channels(&y, &[3, 2]).unwrap();
        assert_eq!(parts[0], p);
        assert!(parts[1].data().iter().all(|&v| v == 0.0));
    }
}
