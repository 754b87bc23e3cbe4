use super::acb::RepConv;
use super::attention::reduced_width;
use super::block::MsGacBlock;
use super::ghost::GhostUnit;
use super::kan::{KanLayer, SplineGrid};
use super::{GacError, Result};
use crate::nncore::{
    join, param_count, BatchNorm, Conv2d, ConvBnAct, GlobalAvgPool, Mode, Module, Scalar,
    StateKind, Tensor,
};
use rand::SeedableRng;
use rand_pcg::Pcg32;
use serde::{Deserialize, Serialize};

/// Layer widths and input geometry of a [`GacKanModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub in_channels: usize,
    pub stem_channels: usize,
    pub block_channels: Vec<usize>,
    pub num_classes: usize,
    pub input_size: usize,
    pub grid: SplineGrid,
}

impl ArchConfig {
    /// Stem 16, blocks of 8/16/24 channels per branch, 224×224 input.
    pub fn reference() -> Self {
        Self {
            in_channels: 3,
            stem_channels: 16,
            block_channels: vec![8, 16, 24],
            num_classes: 7,
            input_size: 224,
            grid: SplineGrid::default(),
        }
    }

    /// Stem 8, blocks of 4/8 channels per branch, 64×64 input.
    pub fn desk() -> Self {
        Self {
            in_channels: 3,
            stem_channels: 8,
            block_channels: vec![4, 8],
            num_classes: 7,
            input_size: 64,
            grid: SplineGrid::default(),
        }
    }

    pub fn feature_width(&self) -> usize {
        self.block_channels.last().map_or(self.stem_channels, |&c| 6 * c)
    }

    /// Spatial size entering each block, then the final size.
    pub fn spatial_sizes(&self) -> Vec<usize> {
        let mut s = self.input_size.div_ceil(2);
        let mut out = vec![s];
        for _ in &self.block_channels {
            s = s.div_ceil(2);
            out.push(s);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(GacError::Config(m.to_string()));
        if self.in_channels == 0 || self.stem_channels == 0 || self.num_classes == 0 {
            return bad("channel and class counts must be positive");
        }
        if self.block_channels.iter().any(|&c| c == 0) {
            return bad("block widths must be positive");
        }
        if self.input_size == 0 {
            return bad("input size must be positive");
        }
        let sizes = self.spatial_sizes();
        if sizes[..self.block_channels.len()].iter().any(|&s| s < 2) {
            return Err(GacError::Config(format!(
                "input {} shrinks below 2×2 before block pooling",
                self.input_size
            )));
        }
        let g = &self.grid;
        if g.intervals == 0 || !(g.hi > g.lo) {
            return bad("spline grid must have positive width and at least one interval");
        }
        Ok(())
    }
}

/// Per-layer FLOPs under the counting convention in [`FlopReport::CONVENTION`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopReport {
    pub total: u64,
    pub layers: Vec<(String, u64)>,
    pub convention: String,
}

impl FlopReport {
    pub const CONVENTION: &'static str = "conv/KAN: 2 FLOPs per multiply-accumulate, bias excluded; \
batch norm: 2 per element; SiLU, sigmoid, pooling and attention products: 1 per output element";

    fn push(&mut self, name: String, flops: u64) {
        self.total += flops;
        self.layers.push((name, flops));
    }
}

/// FLOPs of `conv` on an `h×w` input: twice the multiply-accumulates.
pub fn conv_flops<T: Scalar>(conv: &Conv2d<T>, h: usize, w: usize) -> u64 {
    let (kh, kw) = conv.kernel();
    let (ho, wo) = conv.geom.out_dims(h, w, kh, kw).unwrap_or((0, 0));
    let cin_g = conv.weight.shape()[1];
    2 * (cin_g * kh * kw * conv.out_channels() * ho * wo) as u64
}

/// Stem → multi-scale blocks → global average pool → batch norm → KAN head.
#[derive(Debug, Clone)]
pub struct GacKanModel<T> {
    pub arch: ArchConfig,
    pub stem: ConvBnAct<T>,
    pub blocks: Vec<MsGacBlock<T>>,
    gap: GlobalAvgPool,
    pub feature_norm: BatchNorm<T>,
    pub head: KanLayer<T>,
}

impl<T: Scalar> GacKanModel<T> {
    pub fn new(arch: ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = Pcg32::seed_from_u64(seed);
        let stem = ConvBnAct::new(arch.in_channels, arch.stem_channels, 3, 2, &mut rng)?;
        let mut cin = arch.stem_channels;
        let mut blocks = Vec::with_capacity(arch.block_channels.len());
        for &cb in &arch.block_channels {
            let b = MsGacBlock::new(cin, cb, &mut rng)?;
            cin = b.out_channels();
            blocks.push(b);
        }
        let head = KanLayer::new(cin, arch.num_classes, arch.grid, &mut rng)?;
        Ok(Self {
            stem,
            blocks,
            gap: GlobalAvgPool::new(),
            feature_norm: BatchNorm::new(cin),
            head,
            arch,
        })
    }

    /// Replaces every ACB by its fused single-kernel form.
    pub fn fuse(&mut self) -> Result<()> {
        self.blocks.iter_mut().try_for_each(|b| b.fuse())
    }

    pub fn is_fused(&self) -> bool {
        self.blocks
            .iter()
            .flat_map(|b| &b.branches)
            .all(|g| g.cheap.is_fused())
    }

    pub fn set_gate_override(&mut self, gate: Option<f64>) {
        for b in &mut self.blocks {
            b.set_gate_override(gate);
        }
    }

    pub fn count_params(&self) -> usize {
        param_count(self)
    }

    /// Structural FLOPs count for one `(C, H, W)` input.
    pub fn count_flops(&self, input_hw: (usize, usize)) -> FlopReport {
        let mut rep = FlopReport {
            total: 0,
            layers: Vec::new(),
            convention: FlopReport::CONVENTION.to_string(),
        };
        let (mut h, mut w) = input_hw;
        let conv = &self.stem.conv;
        rep.push("stem.conv".into(), conv_flops(conv, h, w));
        let (kh, kw) = conv.kernel();
        (h, w) = conv.geom.out_dims(h, w, kh, kw).unwrap_or((0, 0));
        let elems = (conv.out_channels() * h * w) as u64;
        rep.push("stem.bn".into(), 2 * elems);
        rep.push("stem.act".into(), elems);
        for (bi, block) in self.blocks.iter().enumerate() {
            let prefix = format!("blocks.{bi}");
            for (g, k) in block.branches.iter().zip(MsGacBlock::<T>::KERNELS) {
                ghost_flops(&mut rep, &join(&prefix, &format!("k{k}")), g, h, w);
            }
            let z = (3 * block.branch_channels()) as u64;
            let (ho, wo) = (h.div_ceil(2), w.div_ceil(2));
            rep.push(join(&prefix, "pool"), 2 * z * (ho * wo) as u64);
            (h, w) = (ho, wo);
        }
        let d = self.head.d_in() as u64;
        rep.push("gap".into(), d);
        rep.push("feature_norm".into(), 2 * d);
        let nb = self.head.grid.basis_count() as u64;
        let dout = self.head.d_out() as u64;
        rep.push("head".into(), d + 2 * dout * d * (nb + 2));
        rep
    }
}

fn ghost_flops<T: Scalar>(rep: &mut FlopReport, prefix: &str, g: &GhostUnit<T>, h: usize, w: usize) {
    let plane = (h * w) as u64;
    let intrinsic = g.intrinsic_channels() as u64;
    rep.push(join(prefix, "primary"), conv_flops(&g.primary.conv, h, w) + 3 * intrinsic * plane);
    let mut cheap: u64 = g.cheap.convs().iter().map(|c| conv_flops(c, h, w)).sum();
    if let RepConv::Branches(_) = g.cheap {
        // three batch norms plus the two branch additions
        cheap += (3 * 2 + 2) * intrinsic * plane;
    }
    cheap += intrinsic * plane;
    rep.push(join(prefix, "cheap"), cheap);
    let c = g.out_channels() as u64;
    let mip = reduced_width(g.out_channels()) as u64;
    let len = (h + w) as u64;
    let ca = c * len
        + 2 * c * mip * len
        + 2 * mip * len
        + mip * len
        + 2 * mip * c * len
        + c * len
        + 2 * c * plane;
    rep.push(join(prefix, "attention"), ca);
}

impl<T: Scalar> Module<T> for GacKanModel<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> crate::nncore::Result<Tensor<T>> {
        let mut y = self.stem.forward(x, mode)?;
        for b in &mut self.blocks {
            y = b.forward(&y, mode)?;
        }
        let f = self.gap.forward(&y, mode)?;
        let f = self.feature_norm.forward(&f, mode)?;
        self.head.forward(&f, mode)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> crate::nncore::Result<Tensor<T>> {
        let g = self.head.backward(grad_out)?;
        let g = self.feature_norm.backward(&g)?;
        let mut g = Module::<T>::backward(&mut self.gap, &g)?;
        for b in self.blocks.iter_mut().rev() {
            g = b.backward(&g)?;
        }
        self.stem.backward(&g)
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, StateKind, &Tensor<T>)) {
        self.stem.visit(&join(prefix, "stem"), f);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("blocks.{i}")), f);
        }
        self.feature_norm.visit(&join(prefix, "feature_norm"), f);
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, StateKind, &mut Tensor<T>)) {
        self.stem.visit_mut(&join(prefix, "stem"), f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("blocks.{i}")), f);
        }
        self.feature_norm.visit_mut(&join(prefix, "feature_norm"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::ConvGeometry;

    #[test]
    fn desk_model_logit_shape() {
        let mut m = GacKanModel::<f32>::new(ArchConfig::desk(), 0).unwrap();
        let y = m.forward(&Tensor::zeros(&[1, 3, 64, 64]), Mode::Eval).unwrap();
        assert_eq!(y.shape(), &[1, 7]);
        assert_eq!(m.head.d_in(), 48);
    }

    #[test]
    fn fixture_conv_counts() {
        let mut rng = Pcg32::seed_from_u64(0);
        let conv = Conv2d::<f32>::new(3, 16, (3, 3), ConvGeometry::same(3, 3), true, &mut rng).unwrap();
        assert_eq!(param_count(&conv), 448);
        assert_eq!(conv_flops(&conv, 32, 32), 884_736);
    }

    #[test]
    fn fusion_shrinks_parameter_count() {
        let mut m = GacKanModel::<f32>::new(ArchConfig::desk(), 1).unwrap();
        let before = m.count_params();
        let flops_before = m.count_flops((64, 64)).total;
        m.fuse().unwrap();
        assert!(m.is_fused());
        assert!(m.count_params() < before);
        assert!(m.count_flops((64, 64)).total < flops_before);
    }

    #[test]
    fn degenerate_configs_rejected() {
        let mut a = ArchConfig::desk();
        a.input_size = 4;
        assert!(GacKanModel::<f32>::new(a, 0).is_err());
        let mut a = ArchConfig::desk();
        a.block_channels = vec![4, 0];
        assert!(a.validate().is_err());
    }
}
