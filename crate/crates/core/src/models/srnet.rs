//! Super-resolution head: backbone features at 1/16 resolution to a
//! full-resolution image in [-1, 1].

use candle_core::Tensor;
use rand::Rng;

use super::config::SrNetConfig;
use super::layers::{ConvSpec, ResidualBlock, ShapeTrace};
use super::params::{ParamSource, ParamStore};
use crate::error::{Error, Result};
use crate::nn::{leaky_relu, pixel_shuffle, LEAKY_SLOPE};

#[derive(Debug, Clone)]
pub struct SrNet {
    cfg: SrNetConfig,
    in_channels: usize,
    reduce: ConvSpec,
    res: ResidualBlock,
    mid: ConvSpec,
    up: Vec<ConvSpec>,
    out: ConvSpec,
}

impl SrNet {
    pub fn new(cfg: &SrNetConfig, in_channels: usize) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.reduce();
        let r2 = cfg.shuffle_factor * cfg.shuffle_factor;
        Ok(Self {
            cfg: cfg.clone(),
            in_channels,
            reduce: ConvSpec::new("sr_head.reduce", in_channels, c, 9),
            res: ResidualBlock::new("sr_head.res", c),
            mid: ConvSpec::new("sr_head.mid", c, c, 3),
            up: (0..cfg.n_upsample_stages)
                .map(|i| ConvSpec::new(format!("sr_head.up{}", i + 1), c, c * r2, 3))
                .collect(),
            out: ConvSpec::new("sr_head.out", c, cfg.output_channels, 9),
        })
    }

    pub fn config(&self) -> &SrNetConfig {
        &self.cfg
    }

    pub(crate) fn layers(&self) -> Vec<&ConvSpec> {
        let mut out = vec![&self.reduce];
        out.extend(self.res.convs());
        out.push(&self.mid);
        out.extend(self.up.iter());
        out.push(&self.out);
        out
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        for layer in self.layers() {
            layer.init(store, rng)?;
        }
        Ok(())
    }

    pub fn forward(&self, p: &impl ParamSource, features: &Tensor) -> Result<Tensor> {
        self.forward_traced(p, features, None)
    }

    pub fn forward_traced(
        &self,
        p: &impl ParamSource,
        features: &Tensor,
        mut trace: Option<&mut ShapeTrace>,
    ) -> Result<Tensor> {
        let (_, c, _, _) = features.dims4()?;
        if c != self.in_channels {
            return Err(Error::Shape(format!(
                "SR head expects {} feature channels, got {:?}",
                self.in_channels,
                features.dims()
            )));
        }
        let h0 = leaky_relu(&self.reduce.forward(p, features)?, LEAKY_SLOPE)?;
        ShapeTrace::record(&mut trace, "sr_reduce", &h0);
        let h = self.res.forward(p, &h0)?;
        let mut h = self.mid.forward(p, &h)?.add(&h0)?;
        for (i, up) in self.up.iter().enumerate() {
            let y = up.forward(p, &h)?;
            h = leaky_relu(&pixel_shuffle(&y, self.cfg.shuffle_factor)?, LEAKY_SLOPE)?;
            ShapeTrace::record(&mut trace, &format!("sr_up{}", i + 1), &h);
        }
        let out = self.out.forward(p, &h)?.tanh()?;
        ShapeTrace::record(&mut trace, "sr_output", &out);
        Ok(out)
    }
}
