use candle_core::Tensor;
use rand::Rng;

use super::config::DiscriminatorConfig;
use super::layers::{ConvSpec, ShapeTrace};
use super::params::{ParamSource, ParamStore};
use crate::error::{Error, Result};
use crate::nn::{he_init, leaky_relu, zeros};

/// Strided conv stack, global average pool and a linear layer producing one
/// unbounded logit per image.
#[derive(Debug, Clone)]
pub struct Discriminator {
    cfg: DiscriminatorConfig,
    stem: ConvSpec,
    stages: Vec<ConvSpec>,
    head_in: usize,
}

impl Discriminator {
    const WEIGHT: &'static str = "discriminator.linear.weight";
    const BIAS: &'static str = "discriminator.linear.bias";

    pub fn new(cfg: &DiscriminatorConfig, in_channels: usize) -> Result<Self> {
        cfg.validate()?;
        let base = cfg.base();
        let stem = ConvSpec::new("discriminator.stem", in_channels, base, 3);
        let stages: Vec<ConvSpec> = (0..cfg.n_strided_stages)
            .map(|i| {
                ConvSpec::new(
                    format!("discriminator.stage{}", i + 1),
                    base << i,
                    base << (i + 1),
                    3,
                )
                .strided(2)
            })
            .collect();
        Ok(Self {
            cfg: cfg.clone(),
            stem,
            stages,
            head_in: base << cfg.n_strided_stages,
        })
    }

    pub(crate) fn layers(&self) -> Vec<&ConvSpec> {
        std::iter::once(&self.stem).chain(self.stages.iter()).collect()
    }

    pub(crate) fn extra_shapes(&self) -> [(String, Vec<usize>); 2] {
        [
            (Self::WEIGHT.to_string(), vec![1, self.head_in]),
            (Self::BIAS.to_string(), vec![1]),
        ]
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        for layer in self.layers() {
            layer.init(store, rng)?;
        }
        let dtype = store.dtype();
        store.insert(Self::WEIGHT, he_init(&[1, self.head_in], self.head_in, 1.0, dtype, rng)?)?;
        store.insert(Self::BIAS, zeros(&[1], dtype)?)
    }

    pub fn forward(&self, p: &impl ParamSource, img: &Tensor) -> Result<Tensor> {
        self.forward_traced(p, img, None)
    }

    pub fn forward_traced(
        &self,
        p: &impl ParamSource,
        img: &Tensor,
        mut trace: Option<&mut ShapeTrace>,
    ) -> Result<Tensor> {
        let (_, _, h, w) = img.dims4()?;
        let div = 1usize << self.cfg.n_strided_stages;
        if h % div != 0 || w % div != 0 {
            return Err(Error::Shape(format!(
                "discriminator input {:?}: spatial size must be divisible by {div}",
                img.dims()
            )));
        }
        let slope = self.cfg.negative_slope;
        let mut x = leaky_relu(&self.stem.forward(p, img)?, slope)?;
        for stage in &self.stages {
            x = leaky_relu(&stage.forward(p, &x)?, slope)?;
        }
        ShapeTrace::record(&mut trace, "discriminator_features", &x);
        let pooled = x.mean(3)?.mean(2)?;
        let w = p.tensor(Self::WEIGHT)?;
        let b = p.tensor(Self::BIAS)?;
        let logits = pooled.matmul(&w.t()?)?.broadcast_add(&b)?;
        ShapeTrace::record(&mut trace, "discriminator_logits", &logits);
        Ok(logits)
    }
}
