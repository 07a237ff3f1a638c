//! Footprint IoU, paired PSNR, discriminator accuracy and the evaluation
//! report.

use std::path::Path;

use candle_core::{DType, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{select_rows, Batch, Dataset, DatasetSpec, SampleStream, SourceTiles, TargetTiles, TileSample};
use crate::error::{Error, Result};
use crate::models::{ModelConfig, Networks, ParamSource, Sunet};
use crate::nn::{downsample_mask, to_f64_vec};
use crate::training::{checkpoint_checksum, load_checkpoint, FakeSet};

/// Sentinel reported instead of +inf when prediction and truth coincide.
pub const PSNR_CAP_DB: f64 = 999.0;
/// Peak-to-peak range of images in `[-1, 1]`.
pub const PSNR_PEAK: f64 = 2.0;

fn binary_values(t: &Tensor, what: &str) -> Result<Vec<bool>> {
    let v = to_f64_vec(t)?;
    v.iter()
        .map(|&x| match x {
            0.0 => Ok(false),
            1.0 => Ok(true),
            _ => Err(Error::Contract(format!("{what} is not binary (found {x})"))),
        })
        .collect()
}

/// Intersection and union pixel counts, summed over any number of tiles.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IouCounts {
    pub intersection: u64,
    pub union: u64,
}

impl IouCounts {
    pub fn of(pred: &Tensor, truth: &Tensor) -> Result<Self> {
        if pred.dims() != truth.dims() {
            return Err(Error::Shape(format!(
                "iou: shapes differ, {:?} vs {:?}",
                pred.dims(),
                truth.dims()
            )));
        }
        let p = binary_values(pred, "iou prediction")?;
        let t = binary_values(truth, "iou truth")?;
        let mut c = Self::default();
        for (a, b) in p.into_iter().zip(t) {
            c.intersection += u64::from(a && b);
            c.union += u64::from(a || b);
        }
        Ok(c)
    }

    pub fn add(&mut self, other: IouCounts) {
        self.intersection += other.intersection;
        self.union += other.union;
    }

    /// `|A ∩ B| / |A ∪ B|`, 1 when both are empty.
    pub fn value(&self) -> f64 {
        if self.union == 0 {
            1.0
        } else {
            self.intersection as f64 / self.union as f64
        }
    }
}

/// IoU of two binary masks of equal shape.
pub fn iou(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    Ok(IouCounts::of(pred, truth)?.value())
}

/// `10·log10(peak² / MSE)`, or [`PSNR_CAP_DB`] when the MSE is zero.
pub fn psnr(pred: &Tensor, truth: &Tensor, peak: f64) -> Result<f64> {
    if pred.dims() != truth.dims() {
        return Err(Error::Shape(format!(
            "psnr: shapes differ, {:?} vs {:?}",
            pred.dims(),
            truth.dims()
        )));
    }
    let (p, t) = (to_f64_vec(pred)?, to_f64_vec(truth)?);
    let mse = p.iter().zip(&t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len().max(1) as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Fraction of correct sign decisions: a logit above zero means "real", so
/// a zero logit counts as "fake".
pub fn accuracy_from_logits(real: &[f64], fake: &[f64]) -> Result<f64> {
    if real.is_empty() || fake.is_empty() {
        return Err(Error::Contract(
            "discriminator accuracy needs non-empty real and fake sets".into(),
        ));
    }
    let correct = real.iter().filter(|&&z| z > 0.0).count() + fake.iter().filter(|&&z| z <= 0.0).count();
    Ok(correct as f64 / (real.len() + fake.len()) as f64)
}

pub fn discriminator_accuracy(
    nets: &Networks,
    params: &impl ParamSource,
    real: &Tensor,
    fake: &Tensor,
) -> Result<f64> {
    let r = to_f64_vec(&nets.discriminator.forward(params, real)?)?;
    let f = to_f64_vec(&nets.discriminator.forward(params, fake)?)?;
    accuracy_from_logits(&r, &f)
}

/// Trailing moving average: entry `i` is the mean of the last
/// `min(window, i + 1)` values.
pub fn smooth_trailing(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for i in 0..values.len() {
        sum += values[i];
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleCounts {
    pub iou_source: usize,
    pub iou_target: usize,
    pub psnr_target: usize,
    pub d_accuracy: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub model: ModelConfig,
    pub dataset: DatasetSpec,
    pub n_tiles: usize,
    pub seed: u64,
    pub fake_set: FakeSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iou_source: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iou_target: Option<f64>,
    /// Absent when the target data has no high-resolution truth.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psnr_target_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_accuracy: Option<f64>,
    pub n_samples: SampleCounts,
    pub config: EvalConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_checksum: Option<String>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// Samples evaluated per forward pass.
const EVAL_CHUNK: usize = 4;

struct DomainEval {
    iou: IouCounts,
    psnr_sum: f64,
    psnr_n: usize,
    sr: Vec<Tensor>,
    /// Clean tiles of source samples.
    clean: Vec<Tensor>,
}

fn eval_domain(
    nets: &Networks,
    params: &impl ParamSource,
    samples: &[TileSample],
) -> Result<DomainEval> {
    let mut e = DomainEval {
        iou: IouCounts::default(),
        psnr_sum: 0.0,
        psnr_n: 0,
        sr: Vec::new(),
        clean: Vec::new(),
    };
    for chunk in samples.chunks(EVAL_CHUNK) {
        let batch = Batch::collate(chunk)?;
        let out = nets.generator(params, &batch.inputs)?;
        let pred = out.seg_logits.gt(0.0)?.to_dtype(DType::F32)?;
        let truth = downsample_mask(&batch.masks, Sunet::DOWNSCALE)?;
        e.iou.add(IouCounts::of(&pred, &truth)?);
        if let Some(hr) = &batch.target_hr {
            let sr = select_rows(&out.sr, &batch.target_rows)?;
            for i in 0..batch.target_rows.len() {
                e.psnr_sum += psnr(&sr.get(i)?, &hr.get(i)?, PSNR_PEAK)?;
                e.psnr_n += 1;
            }
        }
        if let Some(hr) = &batch.source_hr {
            e.clean.push(hr.clone());
        }
        e.sr.push(out.sr);
    }
    Ok(e)
}

fn draw(stream: &mut dyn SampleStream, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<TileSample>> {
    (0..n).map(|_| stream.next_sample(rng)).collect()
}

/// Runs the generator over `n_tiles` seeded samples per available domain
/// and fills every computable metric. IoU is pooled over all tiles at the
/// segmentation-logit resolution; PSNR is the mean of per-tile values.
pub fn evaluate_params(
    nets: &Networks,
    params: &impl ParamSource,
    dataset: &Dataset,
    spec: &DatasetSpec,
    n_tiles: usize,
    seed: u64,
    fake_set: FakeSet,
) -> Result<EvalReport> {
    if n_tiles == 0 {
        return Err(Error::Contract("empty evaluation set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let source = if dataset.source.is_empty() {
        None
    } else {
        let mut s = SourceTiles::new(dataset.source.clone(), spec.clone())?;
        Some(eval_domain(nets, params, &draw(&mut s, n_tiles, &mut rng)?)?)
    };
    let target = if dataset.target.is_empty() {
        None
    } else {
        let mut t = TargetTiles::new(dataset.target.clone(), spec.clone())?;
        Some(eval_domain(nets, params, &draw(&mut t, n_tiles, &mut rng)?)?)
    };

    let mut counts = SampleCounts::default();
    let iou_source = source.as_ref().map(|s| {
        counts.iou_source = n_tiles;
        s.iou.value()
    });
    let iou_target = target.as_ref().map(|t| {
        counts.iou_target = n_tiles;
        t.iou.value()
    });
    let psnr_target_db = target.as_ref().filter(|t| t.psnr_n > 0).map(|t| {
        counts.psnr_target = t.psnr_n;
        t.psnr_sum / t.psnr_n as f64
    });
    let d_accuracy = match (&source, &target) {
        (Some(s), Some(t)) => {
            let reals = Tensor::cat(&s.clean, 0)?;
            let fakes = match fake_set {
                FakeSet::Target => Tensor::cat(&t.sr, 0)?,
                FakeSet::All => Tensor::cat(&[&s.sr[..], &t.sr[..]].concat(), 0)?,
            };
            counts.d_accuracy = reals.dim(0)? + fakes.dim(0)?;
            Some(discriminator_accuracy(nets, params, &reals, &fakes)?)
        }
        _ => None,
    };
    Ok(EvalReport {
        iou_source,
        iou_target,
        psnr_target_db,
        d_accuracy,
        n_samples: counts,
        config: EvalConfig {
            model: nets.config.clone(),
            dataset: spec.clone(),
            n_tiles,
            seed,
            fake_set,
        },
        checkpoint_checksum: None,
    })
}

/// [`evaluate_params`] on a checkpoint, with the checkpoint's checksum in
/// the report.
pub fn evaluate(
    checkpoint: &Path,
    dataset: &Dataset,
    spec: &DatasetSpec,
    n_tiles: usize,
    seed: u64,
) -> Result<EvalReport> {
    let ckpt = load_checkpoint(checkpoint)?;
    let nets = Networks::new(&ckpt.manifest.model)?;
    let fake_set = ckpt.manifest.config.as_ref().map_or(FakeSet::Target, |c| c.fake_set);
    let mut report = evaluate_params(
        &nets,
        &ckpt.state.params.frozen(),
        dataset,
        spec,
        n_tiles,
        seed,
        fake_set,
    )?;
    report.checkpoint_checksum = Some(checkpoint_checksum(checkpoint)?);
    Ok(report)
}
