use std::fmt;
use std::str::FromStr;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PixelMode {
    L2,
    L1,
}

impl fmt::Display for PixelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PixelMode::L2 => "L2",
            PixelMode::L1 => "L1",
        })
    }
}

impl FromStr for PixelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "L2" => Ok(PixelMode::L2),
            "L1" => Ok(PixelMode::L1),
            other => Err(Error::Contract(format!("unknown pixel loss mode `{other}`"))),
        }
    }
}

fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!(
            "{op}: shapes differ, {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// Mean binary cross-entropy on logits,
/// `max(z,0) − z·y + ln(1 + e^(−|z|))`, returned as a rank-0 tensor.
pub fn bce_loss(logits: &Tensor, targets: &Tensor) -> Result<Tensor> {
    same_shape("bce_loss", logits, targets)?;
    let softplus_tail = logits.abs()?.neg()?.exp()?.affine(1.0, 1.0)?.log()?;
    Ok(logits
        .relu()?
        .sub(&logits.mul(targets)?)?
        .add(&softplus_tail)?
        .mean_all()?)
}

/// BCE against a constant label (1 for "real", 0 for "fake").
pub fn bce_with_label(logits: &Tensor, label: f64) -> Result<Tensor> {
    let targets = Tensor::full(label, logits.shape(), logits.device())?.to_dtype(logits.dtype())?;
    bce_loss(logits, &targets)
}

/// Mean squared (L2) or mean absolute (L1) difference, as a rank-0 tensor.
pub fn pixel_loss(pred: &Tensor, target: &Tensor, mode: PixelMode) -> Result<Tensor> {
    same_shape("pixel_loss", pred, target)?;
    let diff = pred.sub(target)?;
    Ok(match mode {
        PixelMode::L2 => diff.sqr()?.mean_all()?,
        PixelMode::L1 => diff.abs()?.mean_all()?,
    })
}

pub(crate) fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)
}
