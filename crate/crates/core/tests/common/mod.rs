//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use udasr::models::{ModelConfig, Networks, ParamStore};
use udasr::nn::{bce_loss, bce_with_label, pixel_loss, PixelMode};

pub fn random(dims: &[usize], rng: &mut ChaCha8Rng, dtype: DType) -> Tensor {
    let n: usize = dims.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(v, dims, &Device::Cpu).unwrap().to_dtype(dtype).unwrap()
}

pub fn values(t: &Tensor) -> Vec<f64> {
    t.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1().unwrap()
}

/// Width 1/64, one module per block.
pub fn miniature_config() -> ModelConfig {
    ModelConfig::with_width(1.0 / 64.0, [1, 1, 1, 1])
}

pub struct GradCheck {
    pub n_params: usize,
    pub checked: usize,
    pub max_rel_err: f64,
    pub failures: Vec<String>,
}

/// Central-difference check of every parameter tensor of the networks
/// against autodiff, `coords` seeded coordinates per tensor, in f64.
///
/// The scalar objective touches every sub-network: L2 pixel loss on the SR
/// output, BCE on the segmentation logits and BCE of D on the SR output.
pub fn gradient_check(cfg: &ModelConfig, seed: u64, coords: usize, step: f64, tol: f64) -> GradCheck {
    let nets = Networks::new(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let store = nets.init(DType::F64, &mut rng).unwrap();
    // Non-zero biases so that bias paths are exercised away from init.
    for (_, var) in store.iter() {
        let noise = random(var.dims(), &mut rng, DType::F64).affine(0.05, 0.0).unwrap();
        var.set(&var.as_tensor().add(&noise).unwrap()).unwrap();
    }
    let x = random(&[2, 3, 16, 16], &mut rng, DType::F64);
    let hr = random(&[2, 3, 16, 16], &mut rng, DType::F64).affine(0.5, 0.0).unwrap();
    let mask_v: Vec<f64> = (0..2).map(|_| rng.random_range(0..2) as f64).collect();
    let mask = Tensor::from_vec(mask_v, (2, 1, 1, 1), &Device::Cpu).unwrap();

    let objective = |p: &ParamStore| -> Tensor {
        let out = nets.generator(p, &x).unwrap();
        let pix = pixel_loss(&out.sr, &hr, PixelMode::L2).unwrap();
        let seg = bce_loss(&out.seg_logits, &mask).unwrap();
        let adv = bce_with_label(&nets.discriminator.forward(p, &out.sr).unwrap(), 1.0).unwrap();
        pix.add(&seg).unwrap().add(&adv).unwrap()
    };
    let grads = objective(&store).backward().unwrap();

    let mut report = GradCheck {
        n_params: store.count_parameters(None),
        checked: 0,
        max_rel_err: 0.0,
        failures: Vec::new(),
    };
    for (name, var) in store.iter() {
        let g = grads.get(var).map(values).unwrap_or_else(|| vec![0.0; var.elem_count()]);
        let base = var.as_tensor().copy().unwrap();
        let flat = values(&base);
        for _ in 0..coords {
            let i = rng.random_range(0..flat.len());
            let eval = |d: f64| {
                let mut v = flat.clone();
                v[i] += d;
                var.set(&Tensor::from_vec(v, var.shape(), &Device::Cpu).unwrap()).unwrap();
                objective(&store).to_scalar::<f64>().unwrap()
            };
            let fd = (eval(step) - eval(-step)) / (2.0 * step);
            var.set(&base).unwrap();
            let scale = fd.abs().max(g[i].abs());
            let rel = if scale < 1e-7 { 0.0 } else { (fd - g[i]).abs() / scale };
            report.checked += 1;
            report.max_rel_err = report.max_rel_err.max(rel);
            if rel > tol {
                report.failures.push(format!("{name}[{i}]: autodiff {} vs fd {fd} (rel {rel:.2e})", g[i]));
            }
        }
    }
    report
}
