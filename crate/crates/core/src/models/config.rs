use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scales a width-1 channel count, never below one channel.
pub(crate) fn scale_channels(base: usize, width: f64) -> usize {
    ((base as f64 * width).round() as usize).max(1)
}

fn validate_width(width: f64) -> Result<()> {
    if !(width > 0.0) || !width.is_finite() {
        return Err(Error::Config(format!(
            "width_multiplier must be positive, got {width}"
        )));
    }
    Ok(())
}

/// Stacked U-Net backbone. Channel counts are given at width 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SunetConfig {
    pub block_module_counts: [usize; 4],
    pub width_multiplier: f64,
    pub feature_channels: usize,
    /// Per-module dilation sequence; odd length, first half is the encoder.
    pub dilation_rates: Vec<usize>,
    pub input_channels: usize,
    pub stem_channels: usize,
    pub block_channels: [usize; 4],
    pub module_inner_channels: [usize; 4],
    /// Init gain of each module's closing 1x1 conv (residual branch scale).
    pub residual_gain: f64,
}

impl Default for SunetConfig {
    fn default() -> Self {
        Self {
            block_module_counts: [2, 7, 7, 1],
            width_multiplier: 1.0,
            feature_channels: 2304,
            dilation_rates: vec![1, 2, 4, 2, 1],
            input_channels: 3,
            stem_channels: 64,
            block_channels: [128, 256, 512, 1024],
            module_inner_channels: [64, 128, 256, 384],
            residual_gain: 0.2,
        }
    }
}

impl SunetConfig {
    pub fn validate(&self) -> Result<()> {
        validate_width(self.width_multiplier)?;
        let f = self.feature_channels as f64 * self.width_multiplier;
        if f < 1.0 || (f - f.round()).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "feature_channels·width_multiplier must be a positive integer, got {f}"
            )));
        }
        if self.block_module_counts.iter().any(|&n| n == 0) {
            return Err(Error::Config("every block needs at least one module".into()));
        }
        if self.dilation_rates.is_empty()
            || self.dilation_rates.len() % 2 == 0
            || self.dilation_rates.contains(&0)
        {
            return Err(Error::Config(format!(
                "dilation_rates must be a non-empty odd-length list of positive integers, got {:?}",
                self.dilation_rates
            )));
        }
        if self.input_channels == 0 {
            return Err(Error::Config("input_channels must be >= 1".into()));
        }
        Ok(())
    }

    pub fn features(&self) -> usize {
        (self.feature_channels as f64 * self.width_multiplier).round() as usize
    }

    pub(crate) fn ch(&self, base: usize) -> usize {
        scale_channels(base, self.width_multiplier)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SrNetConfig {
    pub reduce_channels: usize,
    pub n_upsample_stages: usize,
    pub shuffle_factor: usize,
    pub output_channels: usize,
    pub width_multiplier: f64,
}

impl Default for SrNetConfig {
    fn default() -> Self {
        Self {
            reduce_channels: 256,
            n_upsample_stages: 4,
            shuffle_factor: 2,
            output_channels: 3,
            width_multiplier: 1.0,
        }
    }
}

impl SrNetConfig {
    pub fn validate(&self) -> Result<()> {
        validate_width(self.width_multiplier)?;
        if self.upscale() != 16 {
            return Err(Error::Config(format!(
                "SR head must upscale by 16, got {}^{}",
                self.shuffle_factor, self.n_upsample_stages
            )));
        }
        if self.output_channels == 0 {
            return Err(Error::Config("output_channels must be >= 1".into()));
        }
        Ok(())
    }

    pub fn upscale(&self) -> usize {
        self.shuffle_factor.pow(self.n_upsample_stages as u32)
    }

    pub fn reduce(&self) -> usize {
        scale_channels(self.reduce_channels, self.width_multiplier)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscriminatorConfig {
    pub base_channels: usize,
    pub n_strided_stages: usize,
    pub negative_slope: f64,
    pub width_multiplier: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            base_channels: 64,
            n_strided_stages: 4,
            negative_slope: 0.2,
            width_multiplier: 1.0,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        validate_width(self.width_multiplier)?;
        if !(0.0..1.0).contains(&self.negative_slope) {
            return Err(Error::Config(format!(
                "negative_slope must be in [0,1), got {}",
                self.negative_slope
            )));
        }
        Ok(())
    }

    pub fn base(&self) -> usize {
        scale_channels(self.base_channels, self.width_multiplier)
    }
}

/// Architecture of all three networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ModelConfig {
    pub sunet: SunetConfig,
    pub srnet: SrNetConfig,
    pub discriminator: DiscriminatorConfig,
}

impl ModelConfig {
    /// Default architecture with one width multiplier applied to every network.
    pub fn with_width(width: f64, block_module_counts: [usize; 4]) -> Self {
        Self {
            sunet: SunetConfig {
                width_multiplier: width,
                block_module_counts,
                ..Default::default()
            },
            srnet: SrNetConfig {
                width_multiplier: width,
                ..Default::default()
            },
            discriminator: DiscriminatorConfig {
                width_multiplier: width,
                ..Default::default()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sunet.validate()?;
        self.srnet.validate()?;
        self.discriminator.validate()
    }
}
