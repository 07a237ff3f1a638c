mod common;

use candle_core::{DType, Device, Tensor};
use common::random;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use udasr::data::{Dataset, DatasetSpec, SynthSpec};
use udasr::metrics::*;
use udasr::models::ModelConfig;
use udasr::training::{save_checkpoint, FakeSet, TrainState};

fn mask(bits: &[u8], h: usize, w: usize) -> Tensor {
    let v: Vec<f32> = bits.iter().map(|&b| b as f32).collect();
    Tensor::from_vec(v, (1, 1, h, w), &Device::Cpu).unwrap()
}

proptest! {
    #[test]
    fn iou_is_symmetric(a in prop::collection::vec(0u8..2, 24), b in prop::collection::vec(0u8..2, 24)) {
        let (ma, mb) = (mask(&a, 4, 6), mask(&b, 4, 6));
        prop_assert_eq!(iou(&ma, &mb).unwrap(), iou(&mb, &ma).unwrap());
        if a.contains(&1) {
            prop_assert_eq!(iou(&ma, &ma).unwrap(), 1.0);
        }
    }
}

#[test]
fn iou_rejects_non_binary() {
    let m = Tensor::new(&[0f32, 0.5, 1.0], &Device::Cpu).unwrap().reshape((1, 1, 1, 3)).unwrap();
    assert!(iou(&m, &m).is_err());
}

#[test]
fn psnr_decreases_with_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let img = random(&[1, 3, 16, 16], &mut rng, DType::F64);
    let noise = random(&[1, 3, 16, 16], &mut rng, DType::F64);
    let mut last = f64::INFINITY;
    for amp in [0.01, 0.05, 0.1, 0.2, 0.4] {
        let noisy = img.add(&noise.affine(amp, 0.0).unwrap()).unwrap();
        let p = psnr(&noisy, &img, PSNR_PEAK).unwrap();
        assert!(p < last, "amplitude {amp}: {p} >= {last}");
        last = p;
    }
}

#[test]
fn psnr_is_sign_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random(&[1, 3, 8, 8], &mut rng, DType::F64);
    let b = random(&[1, 3, 8, 8], &mut rng, DType::F64);
    let p = psnr(&a, &b, PSNR_PEAK).unwrap();
    let q = psnr(&a.neg().unwrap(), &b.neg().unwrap(), PSNR_PEAK).unwrap();
    assert_eq!(p, q);
    let quarter = Tensor::full(0.5f64, (1, 1, 2, 2), &Device::Cpu).unwrap();
    let zero = Tensor::zeros((1, 1, 2, 2), DType::F64, &Device::Cpu).unwrap();
    assert!((psnr(&quarter, &zero, 1.0).unwrap() - 10.0 * 4f64.log10()).abs() < 1e-9);
}

#[test]
fn random_logits_give_chance_accuracy() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut draw = |n: usize| -> Vec<f64> {
        (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 } * rng.random_range(0.1..3.0)).collect()
    };
    let (real, fake) = (draw(200), draw(200));
    let acc = accuracy_from_logits(&real, &fake).unwrap();
    assert!((acc - 0.5).abs() <= 0.1, "{acc}");
    assert_eq!(accuracy_from_logits(&[5.0; 3], &[-5.0; 3]).unwrap(), 1.0);
    assert_eq!(accuracy_from_logits(&[0.0; 3], &[0.0; 5]).unwrap(), 5.0 / 8.0);
}

fn tiny_checkpoint(dir: &std::path::Path) -> (std::path::PathBuf, ModelConfig) {
    let model = ModelConfig::with_width(1.0 / 64.0, [1, 1, 1, 1]);
    let nets = udasr::models::Networks::new(&model).unwrap();
    let state = TrainState::new(&nets, 3).unwrap();
    let path = dir.join("ckpt");
    save_checkpoint(&state, &model, None, &path).unwrap();
    (path, model)
}

#[test]
fn evaluate_is_deterministic_and_complete() {
    let dir = tempfile::tempdir().unwrap();
    let (path, _) = tiny_checkpoint(dir.path());
    let ds = Dataset::synthesize(&SynthSpec::for_tile(32), &udasr::data::default_colormap()).unwrap();
    let spec = DatasetSpec::new(32, 4, 1.5).unwrap();
    let a = evaluate(&path, &ds, &spec, 3, 11).unwrap();
    let b = evaluate(&path, &ds, &spec, 3, 11).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    assert!(a.psnr_target_db.is_some());
    for v in [a.iou_source, a.iou_target, a.d_accuracy] {
        assert!((0.0..=1.0).contains(&v.unwrap()));
    }
    assert_eq!(a.n_samples.iou_target, 3);
    assert!(a.checkpoint_checksum.is_some());
    assert!(matches!(evaluate(&path, &ds, &spec, 0, 11), Err(e) if e.to_string().contains("empty evaluation set")));
}

#[test]
fn real_target_data_omits_psnr() {
    let dir = tempfile::tempdir().unwrap();
    let (path, model) = tiny_checkpoint(dir.path());
    let mut ds = Dataset::synthesize(&SynthSpec::for_tile(32), &udasr::data::default_colormap()).unwrap();
    for t in &mut ds.target {
        t.hr = None;
    }
    let spec = DatasetSpec::new(32, 4, 1.5).unwrap();
    let report = evaluate(&path, &ds, &spec, 2, 0).unwrap();
    assert!(report.psnr_target_db.is_none());
    assert!(!report.to_json().unwrap().contains("psnr_target_db"));
    let nets = udasr::models::Networks::new(&model).unwrap();
    let params = udasr::training::load_checkpoint(&path).unwrap().state.params;
    let direct = evaluate_params(&nets, &params.frozen(), &ds, &spec, 2, 0, FakeSet::Target).unwrap();
    assert_eq!(direct.iou_target, report.iou_target);
}
