//! The three networks: segmentation backbone (with its 1x1 segmentation
//! head), super-resolution head and discriminator.
//!
//! Parameters live outside the network structs in a [`ParamStore`], keyed by
//! dotted names with one of the prefixes in [`SUBNETWORKS`].

mod config;
mod discriminator;
mod layers;
mod params;
mod srnet;
mod sunet;

use std::collections::BTreeMap;
use std::fmt;

use candle_core::{DType, Tensor};
use rand::Rng;
use serde::Serialize;

pub use config::{DiscriminatorConfig, ModelConfig, SrNetConfig, SunetConfig};
pub use discriminator::Discriminator;
pub use layers::ShapeTrace;
pub use params::{Frozen, ParamSource, ParamStore};
pub use srnet::SrNet;
pub use sunet::{Sunet, SunetOutput};

use crate::error::Result;

pub const BACKBONE: &str = "backbone.";
pub const SEG_HEAD: &str = "seg_head.";
pub const SR_HEAD: &str = "sr_head.";
pub const DISCRIMINATOR: &str = "discriminator.";
pub const SUBNETWORKS: [&str; 4] = [BACKBONE, SEG_HEAD, SR_HEAD, DISCRIMINATOR];

/// Backbone size quoted for the original stacked U-Net at full width.
pub const REFERENCE_BACKBONE_PARAMS: f64 = 37.7e6;

/// True for parameters updated by the generator-side optimizer.
pub fn is_generator_param(name: &str) -> bool {
    !name.starts_with(DISCRIMINATOR)
}

#[derive(Debug, Clone)]
pub struct Networks {
    pub config: ModelConfig,
    pub sunet: Sunet,
    pub srnet: SrNet,
    pub discriminator: Discriminator,
}

pub struct GeneratorOutput {
    pub features: Tensor,
    pub seg_logits: Tensor,
    pub sr: Tensor,
}

impl Networks {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let sunet = Sunet::new(&config.sunet)?;
        let srnet = SrNet::new(&config.srnet, sunet.feature_channels())?;
        let discriminator =
            Discriminator::new(&config.discriminator, config.srnet.output_channels)?;
        Ok(Self {
            config: config.clone(),
            sunet,
            srnet,
            discriminator,
        })
    }

    /// Freshly initialized parameters: He-normal weights, zero biases.
    pub fn init<R: Rng>(&self, dtype: DType, rng: &mut R) -> Result<ParamStore> {
        let mut store = ParamStore::new(dtype);
        self.sunet.init(&mut store, rng)?;
        self.srnet.init(&mut store, rng)?;
        self.discriminator.init(&mut store, rng)?;
        Ok(store)
    }

    /// Expected name → shape table, independent of any initialized store.
    pub fn parameter_shapes(&self) -> BTreeMap<String, Vec<usize>> {
        let convs = self
            .sunet
            .layers()
            .into_iter()
            .chain(self.srnet.layers())
            .chain(self.discriminator.layers());
        let mut out = BTreeMap::new();
        for conv in convs {
            out.extend(conv.shapes());
        }
        out.extend(self.discriminator.extra_shapes());
        out
    }

    pub fn generator(&self, p: &impl ParamSource, x: &Tensor) -> Result<GeneratorOutput> {
        self.generator_traced(p, x, None)
    }

    pub fn generator_traced(
        &self,
        p: &impl ParamSource,
        x: &Tensor,
        mut trace: Option<&mut ShapeTrace>,
    ) -> Result<GeneratorOutput> {
        let SunetOutput {
            features,
            seg_logits,
        } = self.sunet.forward_traced(p, x, trace.as_deref_mut())?;
        let sr = self.srnet.forward_traced(p, &features, trace)?;
        Ok(GeneratorOutput {
            features,
            seg_logits,
            sr,
        })
    }
}

/// Scalar parameter count of a store, optionally restricted to one
/// sub-network prefix.
pub fn count_parameters(store: &ParamStore, prefix: Option<&str>) -> usize {
    store.count_parameters(prefix)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParameterReport {
    pub per_subnetwork: Vec<(String, usize)>,
    pub total: usize,
}

impl ParameterReport {
    pub fn from_shapes(shapes: &BTreeMap<String, Vec<usize>>) -> Self {
        let per_subnetwork: Vec<(String, usize)> = SUBNETWORKS
            .iter()
            .map(|prefix| {
                let n = shapes
                    .iter()
                    .filter(|(k, _)| k.starts_with(prefix))
                    .map(|(_, s)| s.iter().product::<usize>())
                    .sum();
                (prefix.trim_end_matches('.').to_string(), n)
            })
            .collect();
        let total = per_subnetwork.iter().map(|(_, n)| n).sum();
        Self {
            per_subnetwork,
            total,
        }
    }
}

impl fmt::Display for ParameterReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "parameters:")?;
        for (name, n) in &self.per_subnetwork {
            writeln!(f, "  {name:<14} {n:>12}  ({:.2}M)", *n as f64 / 1e6)?;
        }
        writeln!(f, "  {:<14} {:>12}  ({:.2}M)", "total", self.total, self.total as f64 / 1e6)?;
        write!(
            f,
            "  reference: stacked U-Net backbone reported at {:.1}M parameters",
            REFERENCE_BACKBONE_PARAMS / 1e6
        )
    }
}
