use super::ghost::GhostUnit;
use super::Result;
use crate::nncore::ops::{crop_to, pad_to_even, pool2d_backward, pool2d_forward};
use crate::nncore::{
    concat_channels, join, split_channels, Mode, Module, NnError, PoolKind, Scalar, StateKind,
    Tensor,
};
use rand_pcg::Pcg32;

/// Multi-scale block: Ghost units at kernel sizes 3, 5 and 7 in parallel,
/// concatenated, then 2×2 max and average pooling concatenated.
#[derive(Debug, Clone)]
pub struct MsGacBlock<T> {
    pub branches: Vec<GhostUnit<T>>,
    branch_channels: usize,
    cache: Option<PoolCache>,
}

#[derive(Debug, Clone)]
struct PoolCache {
    in_hw: (usize, usize),
    padded_shape: Vec<usize>,
    max_arg: Vec<usize>,
    avg_arg: Vec<usize>,
}

impl<T: Scalar> MsGacBlock<T> {
    pub const KERNELS: [usize; 3] = [3, 5, 7];

    pub fn new(cin: usize, branch_channels: usize, rng: &mut Pcg32) -> Result<Self> {
        let branches = Self::KERNELS
            .iter()
            .map(|&k| GhostUnit::new(cin, branch_channels, k, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            branches,
            branch_channels,
            cache: None,
        })
    }

    pub fn branch_channels(&self) -> usize {
        self.branch_channels
    }

    pub fn out_channels(&self) -> usize {
        2 * Self::KERNELS.len() * self.branch_channels
    }

    pub fn set_gate_override(&mut self, gate: Option<f64>) {
        for b in &mut self.branches {
            b.attention.set_gate_override(gate);
        }
    }

    pub fn fuse(&mut self) -> Result<()> {
        self.branches.iter_mut().try_for_each(|b| b.fuse())
    }
}

impl<T: Scalar> Module<T> for MsGacBlock<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> crate::nncore::Result<Tensor<T>> {
        let (_, _, h, w) = x.dims4()?;
        if h < 2 || w < 2 {
            return Err(NnError::Dimension(format!(
                "multi-scale block needs spatial dims of at least 2, got {h}x{w}"
            )));
        }
        let outs = self
            .branches
            .iter_mut()
            .map(|b| b.forward(x, mode))
            .collect::<crate::nncore::Result<Vec<_>>>()?;
        let z = concat_channels(&outs.iter().collect::<Vec<_>>())?;
        let z = pad_to_even(&z)?;
        let (ym, max_arg) = pool2d_forward(&z, PoolKind::Max, 2, 2)?;
        let (ya, avg_arg) = pool2d_forward(&z, PoolKind::Avg, 2, 2)?;
        self.cache = Some(PoolCache {
            in_hw: (h, w),
            padded_shape: z.shape().to_vec(),
            max_arg,
            avg_arg,
        });
        concat_channels(&[&ym, &ya])
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> crate::nncore::Result<Tensor<T>> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| NnError::Mode("multi-scale block: backward without forward".into()))?;
        let half = grad_out.shape()[1] / 2;
        let parts = split_channels(grad_out, &[half, half])?;
        let mut gz = pool2d_backward(&cache.padded_shape, PoolKind::Max, 2, 2, &cache.max_arg, &parts[0])?;
        gz.add_assign(&pool2d_backward(
            &cache.padded_shape,
            PoolKind::Avg,
            2,
            2,
            &cache.avg_arg,
            &parts[1],
        )?)?;
        let gz = crop_to(&gz, cache.in_hw.0, cache.in_hw.1)?;
        let sizes: Vec<usize> = self.branches.iter().map(|b| b.out_channels()).collect();
        let grads = split_channels(&gz, &sizes)?;
        let mut gx: Option<Tensor<T>> = None;
        for (b, g) in self.branches.iter_mut().zip(&grads) {
            let gi = b.backward(g)?;
            match gx.as_mut() {
                Some(acc) => acc.add_assign(&gi)?,
                None => gx = Some(gi),
            }
        }
        Ok(gx.expect("three branches"))
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, StateKind, &Tensor<T>)) {
        for (b, k) in self.branches.iter().zip(Self::KERNELS) {
            b.visit(&join(prefix, &format!("k{k}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, StateKind, &mut Tensor<T>)) {
        for (b, k) in self.branches.iter_mut().zip(Self::KERNELS) {
            b.visit_mut(&join(prefix, &format!("k{k}")), f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn output_shape_is_six_branch_widths_at_half_resolution() {
        let mut rng = Pcg32::seed_from_u64(0);
        let mut block = MsGacBlock::<f32>::new(3, 4, &mut rng).unwrap();
        let y = block.forward(&Tensor::zeros(&[2, 3, 8, 8]), Mode::Train).unwrap();
        assert_eq!(y.shape(), &[2, 24, 4, 4]);
        let y = block.forward(&Tensor::zeros(&[2, 3, 7, 5]), Mode::Train).unwrap();
        assert_eq!(y.shape(), &[2, 24, 4, 3]);
    }

    #[test]
    fn too_small_input_is_rejected() {
        let mut rng = Pcg32::seed_from_u64(0);
        let mut block = MsGacBlock::<f32>::new(1, 2, &mut rng).unwrap();
        assert!(block.forward(&Tensor::zeros(&[2, 1, 1, 4]), Mode::Train).is_err());
    }
}
