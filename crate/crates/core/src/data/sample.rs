use std::fmt;

use candle_core::{DType, Device, Tensor};
use image::{imageops, GrayImage, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::labels::{binarize_semantic_mask, default_colormap, ColorClass};
use crate::error::{Error, Result};
use crate::models::Sunet;
use crate::nn::{bilinear_resize, gaussian_blur, nearest_resize, GaussianSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainTag {
    /// High resolution, fully supervised.
    Source,
    /// Low resolution, footprint labels only.
    Target,
}

impl fmt::Display for DomainTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DomainTag::Source => "source",
            DomainTag::Target => "target",
        })
    }
}

/// One training example. Tensors are f32 with a leading batch dim of 1.
#[derive(Debug, Clone)]
pub struct TileSample {
    /// Stable identity (`domain:scene@x,y`) used by determinism checks.
    pub id: String,
    /// `[1, 3, S, S]` in `[-1, 1]`.
    pub input: Tensor,
    /// `[1, 1, S, S]` with values in `{0, 1}`.
    pub mask: Tensor,
    pub domain: DomainTag,
    /// Clean `[1, 3, S, S]` tile; always present for source samples.
    pub hr_target: Option<Tensor>,
}

impl TileSample {
    pub fn validate(&self) -> Result<()> {
        let (_, c, h, w) = self.input.dims4()?;
        let (_, mc, mh, mw) = self.mask.dims4()?;
        if c != 3 || mc != 1 || (h, w) != (mh, mw) {
            return Err(Error::Shape(format!(
                "sample {}: input {:?} and mask {:?} are not aligned",
                self.id,
                self.input.dims(),
                self.mask.dims()
            )));
        }
        let m = self.mask.flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()?;
        if m.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Contract(format!("sample {}: mask is not binary", self.id)));
        }
        match (&self.hr_target, self.domain) {
            (None, DomainTag::Source) => Err(Error::Contract(format!(
                "source sample {} has no high-resolution target",
                self.id
            ))),
            (Some(hr), _) if hr.dims() != self.input.dims() => Err(Error::Shape(format!(
                "sample {}: hr_target {:?} vs input {:?}",
                self.id,
                hr.dims(),
                self.input.dims()
            ))),
            _ => Ok(()),
        }
    }
}

/// Tiling and degradation parameters shared by both domains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub tile_size: usize,
    /// Side of target crops before bilinear upscaling to `tile_size`.
    pub target_native_tile: usize,
    pub blur: GaussianSpec,
    #[serde(default = "default_colormap")]
    pub label_colormap: Vec<ColorClass>,
}

pub const DEFAULT_BLUR_SIGMA: f64 = 1.5;

impl DatasetSpec {
    pub fn new(tile_size: usize, target_native_tile: usize, blur_sigma: f64) -> Result<Self> {
        let spec = Self {
            tile_size,
            target_native_tile,
            blur: GaussianSpec::new(blur_sigma)?,
            label_colormap: default_colormap(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// 512-pixel tiles, 64-pixel target crops.
    pub fn paper() -> Self {
        Self::new(512, 64, DEFAULT_BLUR_SIGMA).expect("valid preset")
    }

    /// 128-pixel tiles, 16-pixel target crops.
    pub fn desk() -> Self {
        Self::new(128, 16, DEFAULT_BLUR_SIGMA).expect("valid preset")
    }

    pub fn upscale(&self) -> usize {
        self.tile_size / self.target_native_tile
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.tile_size;
        if s == 0 || s % Sunet::DOWNSCALE != 0 {
            return Err(Error::Config(format!(
                "tile_size {s} must be a positive multiple of {}",
                Sunet::DOWNSCALE
            )));
        }
        if self.target_native_tile == 0 || s % self.target_native_tile != 0 {
            return Err(Error::Config(format!(
                "tile_size {s} must be a multiple of target_native_tile {}",
                self.target_native_tile
            )));
        }
        self.blur.validate()
    }
}

/// `[1, 3, H, W]` f32 tensor with `v / 127.5 − 1`.
pub fn rgb_to_tensor(img: &RgbImage) -> Result<Tensor> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0f32; 3 * h * w];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            data[c * h * w + i] = f32::from(px[c]) / 127.5 - 1.0;
        }
    }
    Ok(Tensor::from_vec(data, (1, 3, h, w), &Device::Cpu)?)
}

/// `[1, 1, H, W]` f32 tensor of a 0/1 mask.
pub fn mask_to_tensor(mask: &GrayImage) -> Result<Tensor> {
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    let data: Vec<f32> = mask.pixels().map(|p| f32::from(u8::from(p[0] != 0))).collect();
    Ok(Tensor::from_vec(data, (1, 1, h, w), &Device::Cpu)?)
}

/// Inverse of [`rgb_to_tensor`] for one `[3, H, W]` (or `[1, 3, H, W]`)
/// image: `(x + 1) / 2 · 255`, rounded half to even and clamped.
pub fn tensor_to_rgb(t: &Tensor) -> Result<RgbImage> {
    let t = if t.rank() == 4 { t.squeeze(0)? } else { t.clone() };
    let (c, h, w) = t.dims3()?;
    if c != 3 {
        return Err(Error::Shape(format!("expected a 3-channel image, got {:?}", t.dims())));
    }
    let v = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    let q = |x: f32| quantize_level((x + 1.0) * 0.5 * 255.0);
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        image::Rgb([q(v[i]), q(v[h * w + i]), q(v[2 * h * w + i])])
    }))
}

fn quantize_level(level: f32) -> u8 {
    level.round_ties_even().clamp(0.0, 255.0) as u8
}

fn random_origin(rng: &mut impl Rng, w: u32, h: u32, tile: u32) -> (u32, u32) {
    (rng.random_range(0..=w - tile), rng.random_range(0..=h - tile))
}

/// Crops a native-resolution target tile and upsamples it bilinearly to
/// `tile_size`; the mask follows with nearest-neighbour. `hr`, when given,
/// is the matching full-resolution rendering (synthetic data only).
pub fn make_target_sample(
    name: &str,
    image: &RgbImage,
    footprint: &GrayImage,
    hr: Option<&RgbImage>,
    spec: &DatasetSpec,
    rng: &mut impl Rng,
) -> Result<TileSample> {
    let n = spec.target_native_tile as u32;
    let s = spec.tile_size;
    let (w, h) = image.dimensions();
    if w < n || h < n {
        return Err(Error::Dataset(format!(
            "target image {name} is {w}x{h}, smaller than the {n}x{n} native tile"
        )));
    }
    if footprint.dimensions() != (w, h) {
        return Err(Error::Dataset(format!(
            "target image {name} is {w}x{h} but its mask is {:?}",
            footprint.dimensions()
        )));
    }
    let (x, y) = random_origin(rng, w, h, n);
    let crop = imageops::crop_imm(image, x, y, n, n).to_image();
    let mcrop = imageops::crop_imm(footprint, x, y, n, n).to_image();
    let input = bilinear_resize(&rgb_to_tensor(&crop)?, s, s)?;
    let mask = nearest_resize(&mask_to_tensor(&mcrop)?, s, s)?;
    let hr_target = match hr {
        Some(hr) => {
            let r = spec.upscale() as u32;
            if hr.dimensions() != (w * r, h * r) {
                return Err(Error::Dataset(format!(
                    "target image {name}: high-res rendering is {:?}, expected {}x{}",
                    hr.dimensions(),
                    w * r,
                    h * r
                )));
            }
            let s = s as u32;
            Some(rgb_to_tensor(&imageops::crop_imm(hr, x * r, y * r, s, s).to_image())?)
        }
        None => None,
    };
    Ok(TileSample {
        id: format!("target:{name}@{x},{y}"),
        input,
        mask,
        domain: DomainTag::Target,
        hr_target,
    })
}

/// Crops a full-resolution source tile; the clean crop is the SR target and
/// its Gaussian-blurred copy is the network input.
pub fn make_source_sample(
    name: &str,
    image: &RgbImage,
    labels: &RgbImage,
    spec: &DatasetSpec,
    rng: &mut impl Rng,
) -> Result<TileSample> {
    let s = spec.tile_size as u32;
    let (w, h) = image.dimensions();
    if labels.dimensions() != (w, h) {
        return Err(Error::Dataset(format!(
            "source image {name} is {w}x{h} but its labels are {:?}",
            labels.dimensions()
        )));
    }
    if w < s || h < s {
        return Err(Error::Dataset(format!(
            "source image {name} is {w}x{h}, smaller than the {s}x{s} tile"
        )));
    }
    let (x, y) = random_origin(rng, w, h, s);
    let crop = imageops::crop_imm(image, x, y, s, s).to_image();
    let lcrop = imageops::crop_imm(labels, x, y, s, s).to_image();
    let hr = rgb_to_tensor(&crop)?;
    let input = gaussian_blur(&hr, &spec.blur)?;
    let mask = mask_to_tensor(&binarize_semantic_mask(&lcrop, &spec.label_colormap)?)?;
    Ok(TileSample {
        id: format!("source:{name}@{x},{y}"),
        input,
        mask,
        domain: DomainTag::Source,
        hr_target: Some(hr),
    })
}
