use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::{DType, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{is_generator_param, Networks, ParamStore};
use crate::nn::{from_f64_vec, rmsprop_update, to_f64_vec, RmsPropConfig};

/// RMSProp accumulators for the parameters one optimizer owns.
#[derive(Debug, Clone)]
pub struct OptimState {
    pub v: BTreeMap<String, Tensor>,
}

impl OptimState {
    /// Zero accumulators for every parameter of `store` selected by `owns`.
    pub fn zeros(store: &ParamStore, owns: impl Fn(&str) -> bool) -> Result<Self> {
        let mut v = BTreeMap::new();
        for (name, var) in store.iter().filter(|(n, _)| owns(n)) {
            v.insert(name.clone(), var.as_tensor().zeros_like()?);
        }
        Ok(Self { v })
    }

    /// One RMSProp update of every owned parameter. A parameter without a
    /// gradient is treated as having a zero gradient.
    pub fn step(
        &mut self,
        store: &ParamStore,
        grads: &GradStore,
        cfg: &RmsPropConfig,
        step: u64,
    ) -> Result<()> {
        for (name, acc) in self.v.iter_mut() {
            let var = store.var(name)?;
            let mut p = to_f64_vec(var.as_tensor())?;
            let g = match grads.get(var.as_tensor()) {
                Some(g) => to_f64_vec(g)?,
                None => vec![0.0; p.len()],
            };
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
            let mut v = to_f64_vec(acc)?;
            rmsprop_update(&mut p, &g, &mut v, cfg);
            if p.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteParameter {
                    name: name.clone(),
                    step,
                });
            }
            let dims = var.dims().to_vec();
            var.set(&from_f64_vec(p, &dims, var.as_tensor())?)?;
            *acc = from_f64_vec(v, &dims, acc)?;
        }
        Ok(())
    }
}

/// Serializable ChaCha8 position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    /// Decimal, since JSON numbers cannot hold a u128.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: hex::encode(rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let bad = |what: &str| Error::Contract(format!("invalid rng state: {what}"));
        let bytes = hex::decode(&self.seed).map_err(|_| bad("seed is not hex"))?;
        let seed: [u8; 32] = bytes.try_into().map_err(|_| bad("seed is not 32 bytes"))?;
        let word_pos: u128 = self.word_pos.parse().map_err(|_| bad("word_pos"))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(word_pos);
        Ok(rng)
    }
}

/// Everything needed to continue a run exactly.
#[derive(Debug, Clone)]
pub struct TrainState {
    /// Next epoch to run.
    pub epoch: u64,
    /// Optimizer steps taken so far.
    pub global_step: u64,
    pub params: ParamStore,
    /// Backbone, segmentation head and SR head.
    pub opt_g: OptimState,
    pub opt_d: OptimState,
    pub rng: ChaCha8Rng,
    /// Positions of the source and target sample streams.
    pub stream_cursors: [u64; 2],
}

impl TrainState {
    /// Fresh f32 parameters drawn from a generator seeded with `seed`; the
    /// same generator then drives data sampling.
    pub fn new(nets: &Networks, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = nets.init(DType::F32, &mut rng)?;
        Self::from_params(params, rng)
    }

    pub fn from_params(params: ParamStore, rng: ChaCha8Rng) -> Result<Self> {
        let opt_g = OptimState::zeros(&params, is_generator_param)?;
        let opt_d = OptimState::zeros(&params, |n| !is_generator_param(n))?;
        Ok(Self {
            epoch: 0,
            global_step: 0,
            params,
            opt_g,
            opt_d,
            rng,
            stream_cursors: [0, 0],
        })
    }

    /// Accumulator of a parameter, whichever optimizer owns it.
    pub fn accumulator(&self, name: &str) -> Option<&Tensor> {
        self.opt_g.v.get(name).or_else(|| self.opt_d.v.get(name))
    }

    pub fn accumulator_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        if self.opt_g.v.contains_key(name) {
            self.opt_g.v.get_mut(name)
        } else {
            self.opt_d.v.get_mut(name)
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::RngCore;

    use super::*;

    #[test]
    fn rng_state_roundtrip_continues_stream() {
        let mut a = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..37 {
            a.next_u32();
        }
        let mut b = RngState::capture(&a).restore().unwrap();
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }
}
