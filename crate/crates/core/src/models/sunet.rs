//! Stacked U-Net segmentation backbone.
//!
//! Resolution drops by 16 in total: the stride-2 7x7 stem, a stride-2 conv
//! entering block 2, and 2x2 average pools after blocks 2 and 3. Inside a
//! block every module keeps resolution constant, using dilated 3x3 convs.

use candle_core::Tensor;
use rand::Rng;

use super::config::SunetConfig;
use super::layers::{ConvSpec, ResidualBlock, ShapeTrace};
use super::params::{ParamSource, ParamStore};
use crate::error::{Error, Result};
use crate::nn::{leaky_relu, LEAKY_SLOPE};

/// Constant-resolution encoder/decoder: 1x1 in, dilated 3x3 convs with
/// mirrored skips, 1x1 out, plus an identity skip around the whole module.
#[derive(Debug, Clone)]
struct UnetModule {
    pre: ConvSpec,
    convs: Vec<ConvSpec>,
    post: ConvSpec,
}

impl UnetModule {
    fn new(name: &str, channels: usize, inner: usize, dilations: &[usize], gain: f64) -> Self {
        let convs = dilations
            .iter()
            .enumerate()
            .map(|(i, &d)| ConvSpec::new(format!("{name}.conv{}", i + 1), inner, inner, 3).dilated(d))
            .collect();
        Self {
            pre: ConvSpec::new(format!("{name}.pre"), channels, inner, 1),
            convs,
            post: ConvSpec::new(format!("{name}.post"), inner, channels, 1).gain(gain),
        }
    }

    fn layers(&self) -> impl Iterator<Item = &ConvSpec> {
        std::iter::once(&self.pre)
            .chain(self.convs.iter())
            .chain(std::iter::once(&self.post))
    }

    fn forward(&self, p: &impl ParamSource, x: &Tensor) -> Result<Tensor> {
        let mut h = leaky_relu(&self.pre.forward(p, x)?, LEAKY_SLOPE)?;
        let depth = self.convs.len() / 2;
        let mut skips = Vec::with_capacity(depth + 1);
        for conv in &self.convs[..=depth] {
            h = leaky_relu(&conv.forward(p, &h)?, LEAKY_SLOPE)?;
            skips.push(h.clone());
        }
        for (j, conv) in self.convs[depth + 1..].iter().enumerate() {
            h = leaky_relu(&conv.forward(p, &h)?, LEAKY_SLOPE)?.add(&skips[depth - 1 - j])?;
        }
        Ok(x.add(&self.post.forward(p, &h)?)?)
    }
}

#[derive(Debug, Clone)]
struct Block {
    name: String,
    entry: ConvSpec,
    modules: Vec<UnetModule>,
    pool_after: bool,
}

pub struct SunetOutput {
    pub features: Tensor,
    pub seg_logits: Tensor,
}

#[derive(Debug, Clone)]
pub struct Sunet {
    cfg: SunetConfig,
    stem: ConvSpec,
    stem_res: ResidualBlock,
    blocks: Vec<Block>,
    features: ConvSpec,
    seg_head: ConvSpec,
}

impl Sunet {
    pub const DOWNSCALE: usize = 16;

    pub fn new(cfg: &SunetConfig) -> Result<Self> {
        cfg.validate()?;
        let c0 = cfg.ch(cfg.stem_channels);
        let stem = ConvSpec::new("backbone.stem.conv", cfg.input_channels, c0, 7).strided(2);
        let stem_res = ResidualBlock::new("backbone.stem.res", c0);
        let mut blocks = Vec::with_capacity(4);
        let mut c_prev = c0;
        for b in 0..4 {
            let name = format!("backbone.block{}", b + 1);
            let c = cfg.ch(cfg.block_channels[b]);
            let inner = cfg.ch(cfg.module_inner_channels[b]);
            let entry = if b == 1 {
                ConvSpec::new(format!("{name}.entry"), c_prev, c, 3).strided(2)
            } else {
                ConvSpec::new(format!("{name}.entry"), c_prev, c, 1)
            };
            let modules = (0..cfg.block_module_counts[b])
                .map(|m| {
                    UnetModule::new(
                        &format!("{name}.module{}", m + 1),
                        c,
                        inner,
                        &cfg.dilation_rates,
                        cfg.residual_gain,
                    )
                })
                .collect();
            blocks.push(Block {
                name,
                entry,
                modules,
                pool_after: b == 1 || b == 2,
            });
            c_prev = c;
        }
        let f = cfg.features();
        Ok(Self {
            cfg: cfg.clone(),
            stem,
            stem_res,
            blocks,
            features: ConvSpec::new("backbone.features", c_prev, f, 1),
            seg_head: ConvSpec::new("seg_head.conv", f, 1, 1),
        })
    }

    pub fn config(&self) -> &SunetConfig {
        &self.cfg
    }

    pub fn feature_channels(&self) -> usize {
        self.features.c_out
    }

    pub(crate) fn layers(&self) -> Vec<&ConvSpec> {
        let mut out = vec![&self.stem];
        out.extend(self.stem_res.convs());
        for block in &self.blocks {
            out.push(&block.entry);
            for m in &block.modules {
                out.extend(m.layers());
            }
        }
        out.push(&self.features);
        out.push(&self.seg_head);
        out
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        for layer in self.layers() {
            layer.init(store, rng)?;
        }
        Ok(())
    }

    pub fn forward(&self, p: &impl ParamSource, x: &Tensor) -> Result<SunetOutput> {
        self.forward_traced(p, x, None)
    }

    pub fn forward_traced(
        &self,
        p: &impl ParamSource,
        x: &Tensor,
        mut trace: Option<&mut ShapeTrace>,
    ) -> Result<SunetOutput> {
        let (_, c, h, w) = x.dims4()?;
        if h % Self::DOWNSCALE != 0 || w % Self::DOWNSCALE != 0 || h == 0 || w == 0 {
            return Err(Error::Shape(format!(
                "backbone input {:?}: height and width must be divisible by {}",
                x.dims(),
                Self::DOWNSCALE
            )));
        }
        if c != self.cfg.input_channels {
            return Err(Error::Shape(format!(
                "backbone input {:?}: expected {} channels",
                x.dims(),
                self.cfg.input_channels
            )));
        }
        ShapeTrace::record(&mut trace, "input", x);
        let mut h = leaky_relu(&self.stem.forward(p, x)?, LEAKY_SLOPE)?;
        h = self.stem_res.forward(p, &h)?;
        ShapeTrace::record(&mut trace, "stem", &h);
        for block in &self.blocks {
            h = leaky_relu(&block.entry.forward(p, &h)?, LEAKY_SLOPE)?;
            for m in &block.modules {
                h = m.forward(p, &h)?;
            }
            ShapeTrace::record(&mut trace, &block.name["backbone.".len()..], &h);
            if block.pool_after {
                h = h.avg_pool2d(2)?;
                ShapeTrace::record(&mut trace, "avg_pool", &h);
            }
        }
        let features = leaky_relu(&self.features.forward(p, &h)?, LEAKY_SLOPE)?;
        ShapeTrace::record(&mut trace, "features", &features);
        let seg_logits = self.seg_head.forward(p, &features)?;
        ShapeTrace::record(&mut trace, "seg_logits", &seg_logits);
        Ok(SunetOutput {
            features,
            seg_logits,
        })
    }
}
