use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::config::{FakeSet, LossSchedule};
use crate::data::{select_rows, Batch};
use crate::error::{Error, Result};
use crate::models::Sunet;
use crate::nn::{bce_loss, bce_with_label, downsample_mask, pixel_loss, scalar, PixelMode};

/// L2 before `switch_epoch`, L1 from it on.
pub fn select_pixel_mode(epoch: u64, schedule: &LossSchedule) -> PixelMode {
    if epoch < schedule.switch_epoch {
        PixelMode::L2
    } else {
        PixelMode::L1
    }
}

/// Scalar losses of one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub l_seg: f64,
    pub l_pix: f64,
    pub l_adv_g: f64,
    pub l_d: f64,
    pub pix_mode: PixelMode,
}

impl LossBundle {
    pub fn check_finite(&self, step: u64) -> Result<()> {
        for (term, v) in [
            ("l_seg", self.l_seg),
            ("l_pix", self.l_pix),
            ("l_adv_g", self.l_adv_g),
            ("l_d", self.l_d),
        ] {
            if !v.is_finite() {
                return Err(Error::NonFiniteLoss { term, step });
            }
        }
        Ok(())
    }
}

/// Network outputs a batch's losses are computed from.
pub struct Forwards {
    /// `[B, 1, S/16, S/16]`
    pub seg_logits: Tensor,
    /// `[B, 3, S, S]`
    pub sr: Tensor,
    /// D logits on `sr`, all rows, `[B, 1]`.
    pub d_on_sr: Tensor,
    /// D logits on the source rows' clean tiles.
    pub d_real: Tensor,
    /// D logits on the detached fake set.
    pub d_fake: Tensor,
}

/// Loss tensors (rank 0) plus their scalar values.
pub struct Losses {
    pub seg: Tensor,
    pub pix: Tensor,
    pub adv_g: Tensor,
    pub d: Tensor,
    pub bundle: LossBundle,
}

impl Losses {
    /// `λ_seg·l_seg + λ_pix·l_pix + λ_adv·l_adv_g`
    pub fn generator_objective(&self, schedule: &LossSchedule) -> Result<Tensor> {
        generator_objective(&self.seg, &self.pix, &self.adv_g, schedule)
    }
}

pub(crate) fn generator_objective(
    seg: &Tensor,
    pix: &Tensor,
    adv_g: &Tensor,
    s: &LossSchedule,
) -> Result<Tensor> {
    Ok(seg
        .affine(s.lambda_seg, 0.0)?
        .add(&pix.affine(s.lambda_pix, 0.0)?)?
        .add(&adv_g.affine(s.lambda_adv, 0.0)?)?)
}

/// Fails unless the batch holds both domains (or single-domain batches are
/// explicitly allowed).
pub fn check_domains(batch: &Batch, allow_single_domain: bool) -> Result<()> {
    if batch.source_rows.is_empty() {
        return Err(Error::Contract(
            "batch has no source samples; D has no real images".into(),
        ));
    }
    if batch.target_rows.is_empty() && !allow_single_domain {
        return Err(Error::Contract(
            "batch has no target samples; training requires mixed batches".into(),
        ));
    }
    Ok(())
}

/// Rows of the batch whose SR outputs D treats as fakes. Falls back to all
/// rows when the batch has no target sample.
pub fn fake_rows(batch: &Batch, fake_set: FakeSet) -> Vec<usize> {
    match fake_set {
        FakeSet::Target if !batch.target_rows.is_empty() => batch.target_rows.clone(),
        _ => (0..batch.len()).collect(),
    }
}

/// BCE of the segmentation logits against the area-downsampled,
/// re-thresholded footprint masks, over all samples.
pub fn seg_loss(batch: &Batch, seg_logits: &Tensor) -> Result<Tensor> {
    let target = downsample_mask(&batch.masks, Sunet::DOWNSCALE)?.to_dtype(seg_logits.dtype())?;
    bce_loss(seg_logits, &target)
}

/// Pixel loss over source rows only; zero when there are none.
pub fn pix_loss(batch: &Batch, sr: &Tensor, mode: PixelMode) -> Result<Tensor> {
    match &batch.source_hr {
        Some(hr) => {
            let pred = select_rows(sr, &batch.source_rows)?;
            pixel_loss(&pred, &hr.to_dtype(sr.dtype())?, mode)
        }
        None => Ok(Tensor::zeros((), sr.dtype(), sr.device())?),
    }
}

/// `½·[BCE(D(real), 1) + BCE(D(fake), 0)]`
pub fn d_loss(d_real: &Tensor, d_fake: &Tensor) -> Result<Tensor> {
    Ok(bce_with_label(d_real, 1.0)?
        .add(&bce_with_label(d_fake, 0.0)?)?
        .affine(0.5, 0.0)?)
}

/// Non-saturating generator loss `BCE(D(SR(x)), 1)` over every sample.
pub fn adv_g_loss(d_on_sr: &Tensor) -> Result<Tensor> {
    bce_with_label(d_on_sr, 1.0)
}

pub fn compute_losses(
    batch: &Batch,
    fwd: &Forwards,
    epoch: u64,
    schedule: &LossSchedule,
    allow_single_domain: bool,
) -> Result<Losses> {
    check_domains(batch, allow_single_domain)?;
    let pix_mode = select_pixel_mode(epoch, schedule);
    let seg = seg_loss(batch, &fwd.seg_logits)?;
    let pix = pix_loss(batch, &fwd.sr, pix_mode)?;
    let adv_g = adv_g_loss(&fwd.d_on_sr)?;
    let d = d_loss(&fwd.d_real, &fwd.d_fake)?;
    let bundle = LossBundle {
        l_seg: scalar(&seg)?,
        l_pix: scalar(&pix)?,
        l_adv_g: scalar(&adv_g)?,
        l_d: scalar(&d)?,
        pix_mode,
    };
    Ok(Losses {
        seg,
        pix,
        adv_g,
        d,
        bundle,
    })
}
