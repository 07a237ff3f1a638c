//! Numeric building blocks shared by the networks and the data pipeline.
//!
//! Tensors are candle `Tensor`s laid out `[batch, channel, row, col]`; f32 is
//! the training dtype and f64 is used for gradient checks.

mod blur;
mod conv;
mod init;
mod loss;
mod resample;
mod rmsprop;
mod shuffle;

use candle_core::Tensor;

pub use blur::{gaussian_blur, GaussianSpec};
pub use conv::{conv2d, Conv2dParams};
pub use init::{he_init, he_std, zeros};
pub use loss::{bce_loss, bce_with_label, pixel_loss, PixelMode};
pub(crate) use loss::scalar;
pub use resample::{area_downsample, bilinear_resize, downsample_mask, nearest_resize};
pub(crate) use resample::{from_f64_vec, to_f64_vec};
pub use rmsprop::{rmsprop_step, rmsprop_update, RmsPropConfig};
pub use shuffle::{pixel_shuffle, pixel_unshuffle};

use crate::error::Result;

pub const LEAKY_SLOPE: f64 = 0.2;

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&x.affine(slope, 0.0)?)?)
}
