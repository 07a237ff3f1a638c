use candle_core::{DType, Device, Tensor};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// He (Kaiming) normal initialization: i.i.d. `N(0, 2/fan_in)` scaled by `gain`.
pub fn he_init<R: Rng>(
    shape: &[usize],
    fan_in: usize,
    gain: f64,
    dtype: DType,
    rng: &mut R,
) -> Result<Tensor> {
    if fan_in == 0 {
        return Err(Error::Contract("he_init: fan_in must be > 0".into()));
    }
    let std = he_std(fan_in) * gain;
    let n: usize = shape.iter().product();
    let values: Vec<f64> = if std == 0.0 {
        vec![0.0; n]
    } else {
        let dist = Normal::new(0.0, std).map_err(|e| Error::Contract(e.to_string()))?;
        (0..n).map(|_| dist.sample(rng)).collect()
    };
    Ok(Tensor::from_vec(values, shape, &Device::Cpu)?.to_dtype(dtype)?)
}

pub fn he_std(fan_in: usize) -> f64 {
    (2.0 / fan_in as f64).sqrt()
}

pub fn zeros(shape: &[usize], dtype: DType) -> Result<Tensor> {
    Ok(Tensor::zeros(shape, dtype, &Device::Cpu)?)
}
