//! Two-domain building segmentation with an adversarially trained
//! super-resolution head.
//!
//! A stacked U-Net backbone is trained on mixed batches of high-resolution
//! *source* tiles and bilinearly upscaled low-resolution *target* tiles. Its
//! features feed a pixel-shuffle super-resolution head, supervised
//! pixel-wise on source tiles and adversarially on both domains.

pub mod curve;
pub mod data;
pub mod error;
pub mod fsutil;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod training;

pub use candle_core;
pub use error::{Error, Result};
