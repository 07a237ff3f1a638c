use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};

use super::resample::{from_f64_vec, to_f64_vec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmsPropConfig {
    pub alpha: f64,
    pub lr: f64,
    pub eps: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self {
            alpha: 0.99,
            lr: 1e-4,
            eps: 1e-8,
        }
    }
}

impl RmsPropConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("rmsprop alpha must be in (0,1), got {}", self.alpha)));
        }
        if !(self.lr >= 0.0) || !(self.eps >= 0.0) {
            return Err(Error::Config("rmsprop lr and eps must be >= 0".into()));
        }
        Ok(())
    }
}

/// One RMSProp update on flat buffers:
/// `v ← α·v + (1−α)·g²`, `p ← p − η·g / (sqrt(v) + ε)`.
///
/// A zero gradient leaves the parameter untouched even when `v = ε = 0`.
pub fn rmsprop_update(param: &mut [f64], grad: &[f64], v: &mut [f64], cfg: &RmsPropConfig) {
    debug_assert!(param.len() == grad.len() && grad.len() == v.len());
    for ((p, &g), vi) in param.iter_mut().zip(grad).zip(v.iter_mut()) {
        *vi = cfg.alpha * *vi + (1.0 - cfg.alpha) * g * g;
        if g != 0.0 {
            *p -= cfg.lr * g / (vi.sqrt() + cfg.eps);
        }
    }
}

/// Applies [`rmsprop_update`] to a candle variable and its accumulator.
/// Fails without touching anything when `grad` holds a non-finite value.
pub fn rmsprop_step(
    name: &str,
    param: &Var,
    grad: &Tensor,
    v: &mut Tensor,
    cfg: &RmsPropConfig,
) -> Result<()> {
    if param.dims() != grad.dims() || param.dims() != v.dims() {
        return Err(Error::Shape(format!(
            "rmsprop `{name}`: param {:?}, grad {:?}, accumulator {:?}",
            param.dims(),
            grad.dims(),
            v.dims()
        )));
    }
    let g = to_f64_vec(grad)?;
    if g.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteGradient(name.to_string()));
    }
    let mut p = to_f64_vec(param.as_tensor())?;
    let mut acc = to_f64_vec(v)?;
    rmsprop_update(&mut p, &g, &mut acc, cfg);
    let dims = param.dims().to_vec();
    param.set(&from_f64_vec(p, &dims, param.as_tensor())?)?;
    *v = from_f64_vec(acc, &dims, v)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use candle_core::Device;

    use super::*;

    #[test]
    fn hand_evaluated_first_step() {
        let cfg = RmsPropConfig {
            alpha: 0.9,
            lr: 0.1,
            eps: 0.0,
        };
        let (mut p, mut v) = (vec![1.0], vec![0.0]);
        rmsprop_update(&mut p, &[1.0], &mut v, &cfg);
        assert!((v[0] - 0.1).abs() < 1e-15);
        assert!(((1.0 - p[0]) - 0.316228).abs() < 1e-6);
    }

    #[test]
    fn zero_learning_rate_keeps_param() {
        let cfg = RmsPropConfig {
            lr: 0.0,
            ..Default::default()
        };
        let (mut p, mut v) = (vec![0.25, -3.0], vec![0.0, 1.0]);
        rmsprop_update(&mut p, &[0.5, -2.0], &mut v, &cfg);
        assert_eq!(p, [0.25, -3.0]);
        assert!((v[0] - 0.01 * 0.25).abs() < 1e-15);
        assert!((v[1] - (0.99 + 0.01 * 4.0)).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_decays_accumulator_only() {
        let cfg = RmsPropConfig {
            alpha: 0.5,
            lr: 1.0,
            eps: 0.0,
        };
        let (mut p, mut v) = (vec![2.0, 3.0], vec![4.0, 0.0]);
        rmsprop_update(&mut p, &[0.0, 0.0], &mut v, &cfg);
        assert_eq!(p, [2.0, 3.0]);
        assert_eq!(v, [2.0, 0.0]);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let var = Var::new(&[1f32, 2.0], &Device::Cpu).unwrap();
        let grad = Tensor::new(&[f32::NAN, 0.0], &Device::Cpu).unwrap();
        let mut v = Tensor::zeros(2, candle_core::DType::F32, &Device::Cpu).unwrap();
        let err = rmsprop_step("sr_head.up0.weight", &var, &grad, &mut v, &Default::default())
            .unwrap_err();
        assert!(err.to_string().contains("sr_head.up0.weight"));
        assert_eq!(var.to_vec1::<f32>().unwrap(), [1.0, 2.0]);
    }

    #[test]
    fn tensor_step_is_deterministic_and_keeps_v_nonnegative() {
        let run = || {
            let var = Var::new(&[0.5f32, -0.25, 1.0], &Device::Cpu).unwrap();
            let mut v = Tensor::zeros(3, candle_core::DType::F32, &Device::Cpu).unwrap();
            for k in 0..5 {
                let g = Tensor::new(&[0.1f32 * k as f32, -0.3, 0.0], &Device::Cpu).unwrap();
                rmsprop_step("w", &var, &g, &mut v, &Default::default()).unwrap();
            }
            (var.to_vec1::<f32>().unwrap(), v.to_vec1::<f32>().unwrap())
        };
        let (a, va) = run();
        let (b, vb) = run();
        assert_eq!(a, b);
        assert_eq!(va, vb);
        assert!(va.iter().all(|&x| x >= 0.0));
    }
}
