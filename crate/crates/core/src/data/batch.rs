use candle_core::{Device, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::dataset::{SourceScene, TargetScene};
use super::sample::{make_source_sample, make_target_sample, DatasetSpec, DomainTag, TileSample};
use crate::error::{Error, Result};

/// An endless supply of samples from one domain. All randomness comes from
/// the caller's generator, so a stream's output is a function of the
/// generator state and [`SampleStream::cursor`].
pub trait SampleStream {
    fn domain(&self) -> DomainTag;
    fn next_sample(&mut self, rng: &mut ChaCha8Rng) -> Result<TileSample>;
    /// Position for streams that walk a fixed list; 0 otherwise.
    fn cursor(&self) -> u64 {
        0
    }
    fn seek(&mut self, _cursor: u64) {}
}

/// Random scene, random crop.
pub struct SourceTiles {
    scenes: Vec<SourceScene>,
    spec: DatasetSpec,
}

impl SourceTiles {
    pub fn new(scenes: Vec<SourceScene>, spec: DatasetSpec) -> Result<Self> {
        if scenes.is_empty() {
            return Err(Error::Dataset("no source scenes".into()));
        }
        Ok(Self { scenes, spec })
    }
}

impl SampleStream for SourceTiles {
    fn domain(&self) -> DomainTag {
        DomainTag::Source
    }

    fn next_sample(&mut self, rng: &mut ChaCha8Rng) -> Result<TileSample> {
        let s = &self.scenes[rng.random_range(0..self.scenes.len())];
        make_source_sample(&s.name, &s.image, &s.labels, &self.spec, rng)
    }
}

pub struct TargetTiles {
    scenes: Vec<TargetScene>,
    spec: DatasetSpec,
}

impl TargetTiles {
    pub fn new(scenes: Vec<TargetScene>, spec: DatasetSpec) -> Result<Self> {
        if scenes.is_empty() {
            return Err(Error::Dataset("no target scenes".into()));
        }
        Ok(Self { scenes, spec })
    }
}

impl SampleStream for TargetTiles {
    fn domain(&self) -> DomainTag {
        DomainTag::Target
    }

    fn next_sample(&mut self, rng: &mut ChaCha8Rng) -> Result<TileSample> {
        let s = &self.scenes[rng.random_range(0..self.scenes.len())];
        make_target_sample(&s.name, &s.image, &s.footprint, s.hr.as_ref(), &self.spec, rng)
    }
}

/// A fixed list of samples served round-robin, wrapping at the end.
pub struct FixedTiles {
    samples: Vec<TileSample>,
    cursor: u64,
}

impl FixedTiles {
    pub fn new(samples: Vec<TileSample>) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(Error::Dataset("fixed tile set is empty".into()));
        };
        let domain = first.domain;
        if samples.iter().any(|s| s.domain != domain) {
            return Err(Error::Dataset("fixed tile set mixes domains".into()));
        }
        Ok(Self { samples, cursor: 0 })
    }

    /// Draws `n` samples from `stream` once and keeps them.
    pub fn draw(stream: &mut dyn SampleStream, n: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let samples = (0..n)
            .map(|_| stream.next_sample(rng))
            .collect::<Result<Vec<_>>>()?;
        Self::new(samples)
    }

    pub fn samples(&self) -> &[TileSample] {
        &self.samples
    }
}

impl SampleStream for FixedTiles {
    fn domain(&self) -> DomainTag {
        self.samples[0].domain
    }

    fn next_sample(&mut self, _rng: &mut ChaCha8Rng) -> Result<TileSample> {
        let i = (self.cursor % self.samples.len() as u64) as usize;
        self.cursor += 1;
        Ok(self.samples[i].clone())
    }

    fn cursor(&self) -> u64 {
        self.cursor
    }

    fn seek(&mut self, cursor: u64) {
        self.cursor = cursor;
    }
}

/// Number of source samples in a mixed batch.
pub fn source_count(batch_size: usize, source_fraction: f64) -> usize {
    (batch_size as f64 * source_fraction).round() as usize
}

/// `round(batch_size·source_fraction)` source samples and the rest target,
/// in an order shuffled by `rng`.
pub fn mixed_minibatch(
    source: &mut dyn SampleStream,
    target: &mut dyn SampleStream,
    batch_size: usize,
    source_fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<TileSample>> {
    if batch_size < 2 {
        return Err(Error::Contract(format!("mixed batch size must be >= 2, got {batch_size}")));
    }
    if !(source_fraction > 0.0 && source_fraction < 1.0) {
        return Err(Error::Contract(format!(
            "source_fraction must be in (0, 1), got {source_fraction}"
        )));
    }
    if source.domain() != DomainTag::Source || target.domain() != DomainTag::Target {
        return Err(Error::Contract("mixed_minibatch streams passed in the wrong order".into()));
    }
    let n_src = source_count(batch_size, source_fraction);
    let mut out = Vec::with_capacity(batch_size);
    for _ in 0..n_src {
        out.push(source.next_sample(rng)?);
    }
    for _ in n_src..batch_size {
        out.push(target.next_sample(rng)?);
    }
    out.shuffle(rng);
    Ok(out)
}

/// Batch drawn from one stream only (used by source-only overfit runs).
pub fn single_domain_batch(
    stream: &mut dyn SampleStream,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<TileSample>> {
    if batch_size == 0 {
        return Err(Error::Contract("batch size must be >= 1".into()));
    }
    (0..batch_size).map(|_| stream.next_sample(rng)).collect()
}

/// Samples stacked along the batch dimension.
#[derive(Debug, Clone)]
pub struct Batch {
    pub ids: Vec<String>,
    pub domains: Vec<DomainTag>,
    /// `[B, 3, S, S]`
    pub inputs: Tensor,
    /// `[B, 1, S, S]`
    pub masks: Tensor,
    pub source_rows: Vec<usize>,
    pub target_rows: Vec<usize>,
    /// Clean tiles of the source rows, `[n_source, 3, S, S]`.
    pub source_hr: Option<Tensor>,
    /// Truth for the target rows when every target sample has it.
    pub target_hr: Option<Tensor>,
}

impl Batch {
    pub fn collate(samples: &[TileSample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Contract("cannot collate an empty batch".into()));
        }
        for s in samples {
            s.validate()?;
        }
        let inputs: Vec<&Tensor> = samples.iter().map(|s| &s.input).collect();
        let masks: Vec<&Tensor> = samples.iter().map(|s| &s.mask).collect();
        let rows = |d: DomainTag| -> Vec<usize> {
            (0..samples.len()).filter(|&i| samples[i].domain == d).collect()
        };
        let (source_rows, target_rows) = (rows(DomainTag::Source), rows(DomainTag::Target));
        let hr = |rows: &[usize]| -> Result<Option<Tensor>> {
            let ts: Option<Vec<&Tensor>> =
                rows.iter().map(|&i| samples[i].hr_target.as_ref()).collect();
            match ts {
                Some(ts) if !ts.is_empty() => Ok(Some(Tensor::cat(&ts, 0)?)),
                _ => Ok(None),
            }
        };
        Ok(Self {
            ids: samples.iter().map(|s| s.id.clone()).collect(),
            domains: samples.iter().map(|s| s.domain).collect(),
            inputs: Tensor::cat(&inputs, 0)?,
            masks: Tensor::cat(&masks, 0)?,
            source_hr: hr(&source_rows)?,
            target_hr: hr(&target_rows)?,
            source_rows,
            target_rows,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Rows of `t` along dim 0.
pub fn select_rows(t: &Tensor, rows: &[usize]) -> Result<Tensor> {
    let idx: Vec<u32> = rows.iter().map(|&r| r as u32).collect();
    let idx = Tensor::from_vec(idx, rows.len(), &Device::Cpu)?;
    Ok(t.index_select(&idx, 0)?)
}
