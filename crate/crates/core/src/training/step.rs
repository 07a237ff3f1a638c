use candle_core::Tensor;

use super::config::{FakeSet, LossSchedule, OptimizerConfig, RunConfig};
use super::losses::{
    adv_g_loss, check_domains, d_loss, fake_rows, generator_objective, pix_loss, seg_loss,
    select_pixel_mode, LossBundle,
};
use super::state::TrainState;
use crate::data::{select_rows, Batch};
use crate::error::{Error, Result};
use crate::models::{ModelConfig, Networks};
use crate::nn::scalar;

/// Networks plus the knobs a step needs.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub nets: Networks,
    pub schedule: LossSchedule,
    pub optimizer: OptimizerConfig,
    pub fake_set: FakeSet,
    pub allow_single_domain: bool,
}

fn finite(term: &'static str, t: &Tensor, step: u64) -> Result<f64> {
    let v = scalar(t)?;
    if !v.is_finite() {
        return Err(Error::NonFiniteLoss { term, step });
    }
    Ok(v)
}

impl Trainer {
    pub fn new(model: &ModelConfig, schedule: LossSchedule, optimizer: OptimizerConfig) -> Result<Self> {
        schedule.validate()?;
        Ok(Self {
            nets: Networks::new(model)?,
            schedule,
            optimizer,
            fake_set: FakeSet::Target,
            allow_single_domain: false,
        })
    }

    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        let mut t = Self::new(&cfg.model_config(), cfg.schedule(), cfg.optimizer)?;
        t.fake_set = cfg.fake_set;
        t.allow_single_domain = cfg.allow_single_domain;
        Ok(t)
    }

    fn real_images(batch: &Batch) -> Result<&Tensor> {
        batch
            .source_hr
            .as_ref()
            .ok_or_else(|| Error::Contract("batch has no source high-resolution tiles".into()))
    }

    /// D update on detached SR outputs. Returns `l_d` before the update.
    fn update_discriminator(
        &self,
        state: &mut TrainState,
        batch: &Batch,
        sr_detached: &Tensor,
        step: u64,
    ) -> Result<f64> {
        let fakes = select_rows(sr_detached, &fake_rows(batch, self.fake_set))?;
        let d = &self.nets.discriminator;
        let d_real = d.forward(&state.params, Self::real_images(batch)?)?;
        let d_fake = d.forward(&state.params, &fakes)?;
        let l_d = d_loss(&d_real, &d_fake)?;
        let value = finite("l_d", &l_d, step)?;
        let grads = l_d.backward()?;
        state
            .opt_d
            .step(&state.params, &grads, &self.optimizer.discriminator(), step)?;
        Ok(value)
    }

    /// One alternating update: D on detached fakes, then the generator side
    /// (backbone, segmentation head, SR head) against the updated, frozen D.
    ///
    /// The generator forward runs once; the D update cannot change it.
    pub fn train_step(&self, state: &mut TrainState, batch: &Batch) -> Result<LossBundle> {
        check_domains(batch, self.allow_single_domain)?;
        let step = state.global_step + 1;
        let out = self.nets.generator(&state.params, &batch.inputs)?;
        let sr_detached = out.sr.detach();

        let l_d = self.update_discriminator(state, batch, &sr_detached, step)?;

        let pix_mode = select_pixel_mode(state.epoch, &self.schedule);
        let seg = seg_loss(batch, &out.seg_logits)?;
        let pix = pix_loss(batch, &out.sr, pix_mode)?;
        let frozen = state.params.frozen();
        // With a zero weight the adversarial term is reported but not
        // back-propagated through D.
        let adv_input = if self.schedule.lambda_adv > 0.0 { &out.sr } else { &sr_detached };
        let adv_g = adv_g_loss(&self.nets.discriminator.forward(&frozen, adv_input)?)?;
        let bundle = LossBundle {
            l_seg: finite("l_seg", &seg, step)?,
            l_pix: finite("l_pix", &pix, step)?,
            l_adv_g: finite("l_adv_g", &adv_g, step)?,
            l_d,
            pix_mode,
        };
        let objective = generator_objective(&seg, &pix, &adv_g, &self.schedule)?;
        finite("generator_objective", &objective, step)?;
        let grads = objective.backward()?;
        state
            .opt_g
            .step(&state.params, &grads, &self.optimizer.generator(), step)?;
        state.global_step = step;
        Ok(bundle)
    }

    /// D-only update against the current generator, which is held fixed.
    /// Does not advance the step counter. Returns `l_d` before the update.
    pub fn discriminator_step(&self, state: &mut TrainState, batch: &Batch) -> Result<f64> {
        check_domains(batch, self.allow_single_domain)?;
        let sr = self.nets.generator(&state.params.frozen(), &batch.inputs)?.sr;
        let step = state.global_step;
        self.update_discriminator(state, batch, &sr, step)
    }
}
