use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{DatasetSpec, SceneSpec, SynthSpec, DEFAULT_BLUR_SIGMA};
use crate::error::{Error, Result};
use crate::models::ModelConfig;
use crate::nn::{GaussianSpec, RmsPropConfig};

/// Pixel-loss switch epoch and loss weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSchedule {
    pub switch_epoch: u64,
    pub lambda_seg: f64,
    pub lambda_pix: f64,
    pub lambda_adv: f64,
}

impl Default for LossSchedule {
    fn default() -> Self {
        Self {
            switch_epoch: 1000,
            lambda_seg: 1.0,
            lambda_pix: 1.0,
            lambda_adv: 1e-3,
        }
    }
}

impl LossSchedule {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_seg", self.lambda_seg),
            ("lambda_pix", self.lambda_pix),
            ("lambda_adv", self.lambda_adv),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub alpha: f64,
    pub lr_g: f64,
    pub lr_d: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let d = RmsPropConfig::default();
        Self {
            alpha: d.alpha,
            lr_g: d.lr,
            lr_d: d.lr,
            eps: d.eps,
        }
    }
}

impl OptimizerConfig {
    pub fn generator(&self) -> RmsPropConfig {
        RmsPropConfig {
            alpha: self.alpha,
            lr: self.lr_g,
            eps: self.eps,
        }
    }

    pub fn discriminator(&self) -> RmsPropConfig {
        RmsPropConfig {
            alpha: self.alpha,
            lr: self.lr_d,
            eps: self.eps,
        }
    }
}

/// Which generator outputs the discriminator sees as fakes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FakeSet {
    /// SR outputs of target-domain samples only.
    #[default]
    Target,
    /// SR outputs of every sample in the batch.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    /// Generated in memory from a recipe.
    Synth(SynthSpec),
    /// A directory with `source/` and `target/` subtrees.
    Root(PathBuf),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synth(SynthSpec::default())
    }
}

/// Tile size and width presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    /// 512-pixel tiles, full width.
    Paper,
    /// 128-pixel tiles, 1/8 width.
    Desk,
}

impl Scale {
    pub fn tile_size(self) -> usize {
        match self {
            Scale::Paper => 512,
            Scale::Desk => 128,
        }
    }

    pub fn width_multiplier(self) -> f64 {
        match self {
            Scale::Paper => 1.0,
            Scale::Desk => 0.125,
        }
    }
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Scale::Paper),
            "desk" => Ok(Scale::Desk),
            other => Err(Error::Config(format!("unknown scale `{other}` (paper|desk)"))),
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scale::Paper => "paper",
            Scale::Desk => "desk",
        })
    }
}

/// One training run, read from a single JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub tile_size: usize,
    /// Defaults to `tile_size / 8`.
    pub target_native_tile: Option<usize>,
    pub width_multiplier: f64,
    pub block_module_counts: [usize; 4],
    pub switch_epoch: u64,
    pub lambda_seg: f64,
    pub lambda_pix: f64,
    pub lambda_adv: f64,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub source_fraction: f64,
    pub epochs: u64,
    pub steps_per_epoch: u64,
    pub blur_sigma: f64,
    pub data: DataSource,
    pub checkpoint_every: u64,
    pub out_dir: PathBuf,
    pub fake_set: FakeSet,
    /// Permits `source_fraction = 1` (source-only batches).
    pub allow_single_domain: bool,
    /// Draw this many source tiles once and cycle through them.
    pub fixed_source_tiles: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let s = LossSchedule::default();
        Self {
            seed: 0,
            tile_size: 512,
            target_native_tile: None,
            width_multiplier: 1.0,
            block_module_counts: [2, 7, 7, 1],
            switch_epoch: s.switch_epoch,
            lambda_seg: s.lambda_seg,
            lambda_pix: s.lambda_pix,
            lambda_adv: s.lambda_adv,
            optimizer: OptimizerConfig::default(),
            batch_size: 4,
            source_fraction: 0.5,
            epochs: 1,
            steps_per_epoch: 10,
            blur_sigma: DEFAULT_BLUR_SIGMA,
            data: DataSource::default(),
            checkpoint_every: 1,
            out_dir: PathBuf::from("runs/default"),
            fake_set: FakeSet::Target,
            allow_single_domain: false,
            fixed_source_tiles: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json(j) => Error::Config(format!("{}: {j}", path.display())),
            other => other,
        })
    }

    /// Desk preset for tests and quick runs.
    pub fn desk() -> Self {
        let mut cfg = Self::default();
        cfg.apply_scale(Scale::Desk);
        cfg
    }

    /// Sets tile size and width, and rescales synthetic scenes to match.
    pub fn apply_scale(&mut self, scale: Scale) {
        self.tile_size = scale.tile_size();
        self.width_multiplier = scale.width_multiplier();
        self.target_native_tile = None;
        if let DataSource::Synth(s) = &mut self.data {
            let fitted = SceneSpec::for_tile(self.tile_size);
            s.scene.size = fitted.size;
            s.scene.building_size = fitted.building_size;
        }
    }

    pub fn native_tile(&self) -> usize {
        self.target_native_tile.unwrap_or(self.tile_size / 8)
    }

    pub fn schedule(&self) -> LossSchedule {
        LossSchedule {
            switch_epoch: self.switch_epoch,
            lambda_seg: self.lambda_seg,
            lambda_pix: self.lambda_pix,
            lambda_adv: self.lambda_adv,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig::with_width(self.width_multiplier, self.block_module_counts)
    }

    pub fn dataset_spec(&self) -> Result<DatasetSpec> {
        let spec = DatasetSpec {
            tile_size: self.tile_size,
            target_native_tile: self.native_tile(),
            blur: GaussianSpec::new(self.blur_sigma)?,
            label_colormap: crate::data::default_colormap(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        self.dataset_spec()?;
        self.schedule().validate()?;
        self.optimizer.generator().validate()?;
        self.optimizer.discriminator().validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.steps_per_epoch == 0 {
            return Err(Error::Config("steps_per_epoch must be >= 1".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config("checkpoint_every must be >= 1".into()));
        }
        let f = self.source_fraction;
        if self.allow_single_domain && f == 1.0 {
            return Ok(());
        }
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Config(format!(
                "source_fraction must be in (0, 1), got {f} (1.0 needs allow_single_domain)"
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("mixed batches need batch_size >= 2".into()));
        }
        let n_src = crate::data::source_count(self.batch_size, f);
        if n_src == 0 || n_src == self.batch_size {
            return Err(Error::Config(format!(
                "batch_size {} with source_fraction {f} leaves one domain empty",
                self.batch_size
            )));
        }
        Ok(())
    }
}
